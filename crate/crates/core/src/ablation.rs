//! Train and score the four MPCA/FSA on-off variants under one recipe.

use std::fmt::Write as _;

use crate::data::SegmentationSample;
use crate::error::Result;
use crate::metrics::evaluate;
use crate::network::{Model, ModelConfig};
use crate::training::{train_loop, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: &'static str,
    pub use_mpca: bool,
    pub use_fsa: bool,
    pub params: usize,
    pub final_loss: f64,
    pub dsc: f64,
    pub iou: f64,
    pub hd95: f64,
}

pub const VARIANTS: [(&str, bool, bool); 4] = [
    ("baseline", false, false),
    ("+mpca", true, false),
    ("+fsa", false, true),
    ("+mpca+fsa", true, true),
];

/// Build each variant from `base` with the same seed, train it on `train`
/// (model selection on `val`) and score the final weights on `test`.
pub fn run_ablation(
    base: &ModelConfig,
    cfg: &TrainConfig,
    train: &[&SegmentationSample],
    val: &[&SegmentationSample],
    test: &[&SegmentationSample],
    mut progress: impl FnMut(&str),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(VARIANTS.len());
    for (variant, use_mpca, use_fsa) in VARIANTS {
        let mc = ModelConfig {
            use_mpca,
            use_fsa,
            ..base.clone()
        };
        let mut model = Model::build(&mc)?;
        let outcome = train_loop(&mut model, train, val, cfg, None, |l| progress(&format!("{variant}\t{}", l.line())))?;
        let report = evaluate(&model, test)?;
        rows.push(AblationRow {
            variant,
            use_mpca,
            use_fsa,
            params: model.parameter_counts().total,
            final_loss: outcome.log.last().map_or(f64::NAN, |l| l.train_loss),
            dsc: report.mean_dsc,
            iou: report.mean_iou,
            hd95: report.mean_hd95,
        });
    }
    Ok(rows)
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant\tmpca\tfsa\tparams\tfinal_loss\tdsc\tiou\thd95\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.variant, r.use_mpca, r.use_fsa, r.params, r.final_loss, r.dsc, r.iou, r.hd95
        );
    }
    s
}
