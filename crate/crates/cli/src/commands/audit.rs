//! `adlite audit`: closed-form parameter counts and symbolic shape
//! propagation for a configuration, no tensors allocated.

use adlite_core::graph::{param_audit, shape_audit, ADLiteConfig, AuditMode};
use adlite_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditSelection {
    Full,
    Compact,
    Both,
}

impl AuditSelection {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(AuditSelection::Full),
            "compact" => Ok(AuditSelection::Compact),
            "both" => Ok(AuditSelection::Both),
            other => Err(Error::Config(format!(
                "unknown audit mode \"{other}\" (expected full, compact, or both)"
            ))),
        }
    }
}

pub fn render(cfg: &ADLiteConfig, selection: AuditSelection) -> Result<String> {
    let audit = param_audit(cfg)?;
    let shapes = shape_audit(cfg)?;
    let mut out = String::new();

    out.push_str(&format!("{:<14} {:>12} {:>12}\n", "layer", "compact", "full"));
    for e in &audit.entries {
        out.push_str(&format!(
            "{:<14} {:>12} {:>12}\n",
            e.name, e.formula_count, e.actual_count
        ));
    }
    let lakhs = |n: usize| n as f64 / 100_000.0;
    if matches!(selection, AuditSelection::Compact | AuditSelection::Both) {
        let total = audit.total(AuditMode::Compact);
        out.push_str(&format!(
            "total (compact): {total} parameters = {:.2} lakhs\n",
            lakhs(total)
        ));
    }
    if matches!(selection, AuditSelection::Full | AuditSelection::Both) {
        let total = audit.total(AuditMode::Full);
        out.push_str(&format!(
            "total (full):    {total} parameters = {:.2} lakhs\n",
            lakhs(total)
        ));
    }

    out.push_str("\nshape audit:\n");
    for (name, shape) in &shapes {
        let rendered = shape
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        out.push_str(&format!("{:<14} ({rendered})\n", name));
    }
    Ok(out)
}

pub fn run(cfg: &ADLiteConfig, selection: AuditSelection) -> Result<()> {
    print!("{}", render(cfg, selection)?);
    Ok(())
}
