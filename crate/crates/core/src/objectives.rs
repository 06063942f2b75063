//! Sequence losses, the KL bridging term and their weighted total.
//!
//! All losses are per-token means in nats. Each function has a `*_grad`
//! twin returning the gradient with respect to the logits it consumed.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompting::RenderedInstance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// α₁, answer-aware evidence generation
    pub alpha_qae: f64,
    /// α₂, evidence-enhanced answering (sequence loss plus bridging)
    pub alpha_qea: f64,
    /// α₃, question restoration
    pub alpha_eaq: f64,
    /// weight of the KL bridging term inside the answering objective
    pub alpha_kl: f64,
    pub use_qae: bool,
    pub use_eaq: bool,
    pub use_kl: bool,
    pub kl_direction: KlDirection,
    /// Treat the evidence-conditioned distribution as a fixed teacher.
    pub kl_teacher_stopgrad: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha_qae: 0.3,
            alpha_qea: 1.0,
            alpha_eaq: 0.3,
            alpha_kl: 1.0,
            use_qae: true,
            use_eaq: true,
            use_kl: true,
            kl_direction: KlDirection::PlainToEvidence,
            kl_teacher_stopgrad: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// KL(p_plain ‖ p_evidence)
    #[default]
    PlainToEvidence,
    /// KL(p_evidence ‖ p_plain)
    EvidenceToPlain,
    /// mean of both directions
    Symmetric,
}

/// Effective multipliers on each component after flags are applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub qae: f64,
    pub seq: f64,
    pub kl: f64,
    pub eaq: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("alpha_qae", self.alpha_qae),
            ("alpha_qea", self.alpha_qea),
            ("alpha_eaq", self.alpha_eaq),
            ("alpha_kl", self.alpha_kl),
        ] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be a non-negative number, got {w}"
                )));
            }
        }
        Ok(())
    }

    pub fn kl_active(&self) -> bool {
        self.use_kl && self.alpha_kl > 0.0
    }

    pub fn coefficients(&self) -> Coefficients {
        Coefficients {
            qae: if self.use_qae { self.alpha_qae } else { 0.0 },
            seq: self.alpha_qea,
            kl: if self.kl_active() {
                self.alpha_qea * self.alpha_kl
            } else {
                0.0
            },
            eaq: if self.use_eaq { self.alpha_eaq } else { 0.0 },
        }
    }
}

/// Raw component values for one example or batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Components {
    pub qae: Option<f64>,
    pub seq: f64,
    pub kl: Option<f64>,
    pub eaq: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_qae: Option<f64>,
    pub l_seq: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_kl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_eaq: Option<f64>,
    pub l_total: f64,
}

/// `α₁·L_qae + α₂·(L_seq + α_kl·L_kl) + α₃·L_eaq` over the enabled components.
pub fn triplet_total(components: &Components, weights: &LossWeights) -> Result<LossBreakdown> {
    weights.validate()?;
    let need = |enabled: bool, value: Option<f64>, name: &str| -> Result<Option<f64>> {
        match (enabled, value) {
            (true, None) => Err(Error::invalid(format!("{name} enabled but not computed"))),
            (true, v) => Ok(v),
            (false, _) => Ok(None),
        }
    };
    let l_qae = need(weights.use_qae, components.qae, "l_qae")?;
    let l_kl = need(weights.kl_active(), components.kl, "l_kl")?;
    let l_eaq = need(weights.use_eaq, components.eaq, "l_eaq")?;
    let c = weights.coefficients();
    let l_total = c.qae * l_qae.unwrap_or(0.0)
        + c.seq * components.seq
        + c.kl * l_kl.unwrap_or(0.0)
        + c.eaq * l_eaq.unwrap_or(0.0);
    Ok(LossBreakdown {
        l_qae,
        l_seq: components.seq,
        l_kl,
        l_eaq,
        l_total,
    })
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax(row: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    row.mapv(|v| v - lse)
}

fn check_shapes(logits: &ArrayView2<'_, f64>, token_ids: &[u32], loss_mask: &[bool]) -> Result<()> {
    if logits.nrows() != token_ids.len() || token_ids.len() != loss_mask.len() {
        return Err(Error::invalid(format!(
            "shape mismatch: {} logit rows, {} tokens, {} mask entries",
            logits.nrows(),
            token_ids.len(),
            loss_mask.len()
        )));
    }
    if loss_mask.first() == Some(&true) {
        return Err(Error::invalid("first token cannot carry loss"));
    }
    if !loss_mask.iter().any(|&m| m) {
        return Err(Error::invalid("loss mask has no positions"));
    }
    if let Some(&id) = token_ids.iter().find(|&&id| id as usize >= logits.ncols()) {
        return Err(Error::OutOfVocab {
            id,
            vocab: logits.ncols(),
        });
    }
    Ok(())
}

/// Teacher-forced mean NLL: for every `t` with `loss_mask[t]`, the row
/// `logits[t - 1]` is scored against `token_ids[t]`.
pub fn sequence_nll(logits: ArrayView2<'_, f64>, token_ids: &[u32], loss_mask: &[bool]) -> Result<f64> {
    sequence_nll_grad(logits, token_ids, loss_mask).map(|(v, _)| v)
}

pub fn sequence_nll_grad(
    logits: ArrayView2<'_, f64>,
    token_ids: &[u32],
    loss_mask: &[bool],
) -> Result<(f64, Array2<f64>)> {
    check_shapes(&logits, token_ids, loss_mask)?;
    let n = loss_mask.iter().filter(|&&m| m).count() as f64;
    let mut grad = Array2::zeros(logits.dim());
    let mut total = 0.0;
    for t in 1..token_ids.len() {
        if !loss_mask[t] {
            continue;
        }
        let logp = log_softmax(logits.row(t - 1));
        let gold = token_ids[t] as usize;
        total -= logp[gold];
        let mut g = grad.row_mut(t - 1);
        g.assign(&logp.mapv(f64::exp));
        g[gold] -= 1.0;
        g /= n;
    }
    Ok((total / n, grad))
}

/// Convenience: NLL of a rendered instance.
pub fn instance_nll_grad(logits: ArrayView2<'_, f64>, inst: &RenderedInstance) -> Result<(f64, Array2<f64>)> {
    sequence_nll_grad(logits, &inst.token_ids, &inst.loss_mask)
}

/// Row pairs `(plain_row, evidence_row)` predicting the same answer token.
pub fn aligned_answer_positions(plain: &RenderedInstance, evidence: &RenderedInstance) -> Result<Vec<(usize, usize)>> {
    if plain.target_ids() != evidence.target_ids() {
        return Err(Error::invalid(format!(
            "bridging targets differ for {}",
            plain.example_id
        )));
    }
    let p = plain.target_range().start;
    let e = evidence.target_range().start;
    Ok((0..plain.target_ids().len()).map(|i| (p + i - 1, e + i - 1)).collect())
}

// KL(softmax(a) ‖ softmax(b)) and its gradients w.r.t. a and b.
fn kl_row(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> (f64, Array1<f64>, Array1<f64>) {
    let la = log_softmax(a);
    let lb = log_softmax(b);
    let pa = la.mapv(f64::exp);
    let pb = lb.mapv(f64::exp);
    let diff = &la - &lb;
    let kl = (&pa * &diff).sum().max(0.0);
    let ga = &pa * &(diff - kl);
    let gb = &pb - &pa;
    (kl, ga, gb)
}

/// Mean over aligned rows of KL between the plain and evidence-conditioned
/// next-token distributions.
pub fn kl_bridging(
    logits_plain: ArrayView2<'_, f64>,
    logits_evidence: ArrayView2<'_, f64>,
    aligned: &[(usize, usize)],
    direction: KlDirection,
) -> Result<f64> {
    kl_bridging_grad(logits_plain, logits_evidence, aligned, direction).map(|(v, _, _)| v)
}

pub fn kl_bridging_grad(
    logits_plain: ArrayView2<'_, f64>,
    logits_evidence: ArrayView2<'_, f64>,
    aligned: &[(usize, usize)],
    direction: KlDirection,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    if aligned.is_empty() {
        return Err(Error::invalid("no aligned answer positions"));
    }
    if logits_plain.ncols() != logits_evidence.ncols() {
        return Err(Error::invalid("bridging logits have different vocabularies"));
    }
    if aligned
        .iter()
        .any(|&(p, e)| p >= logits_plain.nrows() || e >= logits_evidence.nrows())
    {
        return Err(Error::invalid("aligned position outside the logits"));
    }
    let n = aligned.len() as f64;
    let mut gp = Array2::zeros(logits_plain.dim());
    let mut ge = Array2::zeros(logits_evidence.dim());
    let mut total = 0.0;
    for &(p, e) in aligned {
        let a = logits_plain.row(p);
        let b = logits_evidence.row(e);
        let (kl, ga, gb) = match direction {
            KlDirection::PlainToEvidence => kl_row(a, b),
            KlDirection::EvidenceToPlain => {
                let (kl, gb, ga) = kl_row(b, a);
                (kl, ga, gb)
            }
            KlDirection::Symmetric => {
                let (k1, ga1, gb1) = kl_row(a, b);
                let (k2, gb2, ga2) = kl_row(b, a);
                (0.5 * (k1 + k2), 0.5 * (ga1 + ga2), 0.5 * (gb1 + gb2))
            }
        };
        total += kl;
        gp.row_mut(p).scaled_add(1.0 / n, &ga);
        ge.row_mut(e).scaled_add(1.0 / n, &gb);
    }
    Ok((total / n, gp, ge))
}
