//! Sum-squared-error detection loss with its exact gradient.

use super::targets::TargetGrid;
use super::{slot_channel, Field, SLOT_LEN};
use crate::error::{Error, Result};
use crate::geometry::DigitClass;
use crate::inference::{logistic, softmax};
use crate::net::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub coord: f64,
    pub obj: f64,
    pub noobj: f64,
    pub class: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            coord: 5.0,
            obj: 1.0,
            noobj: 0.5,
            class: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.coord, self.obj, self.noobj, self.class];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("loss weights {self:?}")));
        }
        Ok(())
    }
}

/// Weighted loss terms; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub coord: f64,
    pub obj: f64,
    pub noobj: f64,
    pub class: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn add(&mut self, o: &LossTerms) {
        self.coord += o.coord;
        self.obj += o.obj;
        self.noobj += o.noobj;
        self.class += o.class;
        self.total += o.total;
    }
}

/// Sum of squared differences.
pub fn sse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Loss of one grid prediction against its targets, and the gradient with
/// respect to every raw prediction value.
///
/// Coordinates: `coord * [(s(tx)-x)^2 + (s(ty)-y)^2 + (tw-w)^2 + (th-h)^2]` on
/// responsible slots. Objectness: `obj * (s(to)-1)^2` on responsible slots,
/// `noobj * s(to)^2` elsewhere. Classes: `class * sum_c (softmax_c - onehot_c)^2`
/// on responsible slots. `s` is the logistic function.
pub fn detection_loss<T: Real>(
    pred: &Tensor<T>,
    target: &TargetGrid,
    weights: &LossWeights,
) -> Result<(LossTerms, Tensor<T>)> {
    let expected = [target.anchors * SLOT_LEN, target.rows, target.cols];
    if pred.shape() != expected {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target grid {expected:?}",
            pred.shape()
        )));
    }
    let plane = target.rows * target.cols;
    let p = pred.data();
    let mut grad = vec![T::zero(); p.len()];
    let mut terms = LossTerms::default();

    for a in 0..target.anchors {
        let ch = |field: usize| slot_channel(a, field) * plane;
        for cell in 0..plane {
            let at = |field: usize| ch(field) + cell;
            let obj = logistic(p[at(Field::Obj as usize)].as_f64());
            let dsig = obj * (1.0 - obj);
            let Some(t) = &target.slots[a * plane + cell] else {
                terms.noobj += weights.noobj * obj * obj;
                grad[at(Field::Obj as usize)] = T::of(2.0 * weights.noobj * obj * dsig);
                continue;
            };
            terms.obj += weights.obj * (obj - 1.0) * (obj - 1.0);
            grad[at(Field::Obj as usize)] = T::of(2.0 * weights.obj * (obj - 1.0) * dsig);

            for (field, goal) in [(Field::X, t.x), (Field::Y, t.y)] {
                let s = logistic(p[at(field as usize)].as_f64());
                terms.coord += weights.coord * (s - goal) * (s - goal);
                grad[at(field as usize)] = T::of(2.0 * weights.coord * (s - goal) * s * (1.0 - s));
            }
            for (field, goal) in [(Field::W, t.w), (Field::H, t.h)] {
                let v = p[at(field as usize)].as_f64();
                terms.coord += weights.coord * (v - goal) * (v - goal);
                grad[at(field as usize)] = T::of(2.0 * weights.coord * (v - goal));
            }

            let scores: Vec<f64> = (0..DigitClass::COUNT)
                .map(|c| p[at(Field::Class as usize + c)].as_f64())
                .collect();
            let probs = softmax(&scores);
            let mut onehot = [0.0; DigitClass::COUNT];
            onehot[t.class.index()] = 1.0;
            terms.class += weights.class * sse(&probs, &onehot);
            // dL/dp_c, then through the softmax Jacobian
            let g: Vec<f64> = probs
                .iter()
                .zip(&onehot)
                .map(|(q, y)| 2.0 * weights.class * (q - y))
                .collect();
            let gp: f64 = g.iter().zip(&probs).map(|(a, b)| a * b).sum();
            for c in 0..DigitClass::COUNT {
                grad[at(Field::Class as usize + c)] = T::of(probs[c] * (g[c] - gp));
            }
        }
    }
    terms.total = terms.coord + terms.obj + terms.noobj + terms.class;
    Ok((terms, Tensor::from_vec(pred.shape(), grad)?))
}
