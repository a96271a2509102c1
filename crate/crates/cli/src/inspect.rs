//! Parameter listings and the cross-ablation count comparison.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::Context;
use dcff_core::model::param_specs;
use dcff_core::{Ablation, ModelConfig, ParamStore};
use dcff_train::Checkpoint;

/// One line per tensor (name, shape, scalars) and a total.
pub fn param_table(params: &ParamStore) -> String {
    let width = params.names().map(str::len).max().unwrap_or(4).max(4);
    let mut out = format!("{:<width$}  {:<16}  {:>10}\n", "name", "shape", "scalars");
    for (name, t) in params.iter() {
        let shape = format!("{:?}", t.shape());
        let _ = writeln!(out, "{name:<width$}  {shape:<16}  {:>10}", t.numel());
    }
    let _ = writeln!(out, "{} tensors, {} scalars", params.len(), params.scalar_count());
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationCount {
    pub ablation: Ablation,
    pub tensors: usize,
    pub scalars: usize,
}

/// Parameter counts of `model` under every fusion wiring.
pub fn ablation_counts(model: &ModelConfig) -> Vec<AblationCount> {
    Ablation::ALL
        .iter()
        .map(|&ablation| {
            let specs = param_specs(&model.with_ablation(ablation));
            AblationCount {
                ablation,
                tensors: specs.len(),
                scalars: specs.iter().map(|(_, shape, _)| shape.iter().product::<usize>()).sum(),
            }
        })
        .collect()
}

pub fn counts_agree(counts: &[AblationCount]) -> bool {
    counts
        .windows(2)
        .all(|w| (w[0].tensors, w[0].scalars) == (w[1].tensors, w[1].scalars))
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// What `dcff inspect` prints: each checkpoint's table and per-ablation
/// counts, then a comparison when several checkpoints are given.
pub fn report(paths: &[PathBuf]) -> anyhow::Result<String> {
    let mut out = String::new();
    let mut totals = Vec::new();
    for path in paths {
        let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
        let _ = writeln!(out, "== {}", path.display());
        out.push_str(&param_table(&ck.params));
        let counts = ablation_counts(&ck.model);
        for c in &counts {
            let _ = writeln!(
                out,
                "  {:<10} {:>4} tensors {:>10} scalars",
                c.ablation.name(),
                c.tensors,
                c.scalars
            );
        }
        let _ = writeln!(
            out,
            "parameter counts identical across ablations: {}",
            yes_no(counts_agree(&counts))
        );
        totals.push((ck.params.len(), ck.params.scalar_count()));
    }
    if totals.len() > 1 {
        let same = totals.windows(2).all(|w| w[0] == w[1]);
        let _ = writeln!(out, "checkpoints have identical parameter counts: {}", yes_no(same));
    }
    Ok(out)
}
