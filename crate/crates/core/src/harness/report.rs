//! Report rendering: JSON, CSV, and a markdown ablation grid.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harness::compare::ComparisonReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::parameter(
                "format",
                format!("unknown report format `{other}` (expected json, csv, markdown)"),
            )),
        }
    }
}

/// Fixed column order of the comparison CSV.
pub const COMPARISON_CSV_HEADER: &str = "strategy,amota,amotp,fp,fn,ids,tq_recall,nb_conf,trk_conf";

fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn md_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn render_csv(comparison: &ComparisonReport) -> String {
    let mut out = String::from(COMPARISON_CSV_HEADER);
    out.push('\n');
    for s in &comparison.strategies {
        let m = &s.metrics;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            s.strategy,
            m.amota,
            m.amotp,
            m.fp,
            m.fn_,
            m.ids,
            csv_opt(m.tq_recall),
            csv_opt(m.nb_conf_mean),
            csv_opt(m.trk_conf_mean),
        ));
    }
    out
}

fn render_markdown(comparison: &ComparisonReport) -> String {
    let mut out = String::new();
    out.push_str("# Strategy comparison\n\n");
    out.push_str(&format!(
        "config `{}`, seed {}, {} scenes\n\n",
        comparison.config_hash, comparison.seed, comparison.num_scenes
    ));
    out.push_str(
        "| strategy | second chance | dropout | AMOTA | AMOTP | FP | FN | IDS | TQ recall | NB conf | Trk conf |\n",
    );
    out.push_str("|---|---|---|---|---|---|---|---|---|---|---|\n");
    for s in &comparison.strategies {
        let m = &s.metrics;
        out.push_str(&format!(
            "| {} | {} | {} | {:.4} | {:.4} | {} | {} | {} | {} | {} | {} |\n",
            s.strategy,
            yes_no(s.strategy.uses_second_chance()),
            yes_no(s.strategy.uses_dropout()),
            m.amota,
            m.amotp,
            m.fp,
            m.fn_,
            m.ids,
            md_opt(m.tq_recall),
            md_opt(m.nb_conf_mean),
            md_opt(m.trk_conf_mean),
        ));
    }

    out.push_str("\n## Training label rates\n\n");
    out.push_str("| strategy | proposal positive rate | track positive rate | final train loss |\n");
    out.push_str("|---|---|---|---|\n");
    for s in &comparison.strategies {
        out.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            s.strategy,
            md_opt(s.proposal_positive_rate),
            md_opt(s.track_positive_rate),
            md_opt(s.final_train_loss),
        ));
    }

    if !comparison.deltas.is_empty() {
        out.push_str(&format!(
            "\n## Deltas vs {}\n\n",
            comparison.strategies[0].strategy
        ));
        out.push_str("| strategy | dAMOTA | dAMOTP | dFP | dFN | dIDS | dTQ recall | dNB conf | dTrk conf |\n");
        out.push_str("|---|---|---|---|---|---|---|---|---|\n");
        for d in &comparison.deltas {
            out.push_str(&format!(
                "| {} | {:+.4} | {:+.4} | {:+} | {:+} | {:+} | {} | {} | {} |\n",
                d.strategy,
                d.amota,
                d.amotp,
                d.fp,
                d.fn_,
                d.ids,
                md_opt(d.tq_recall),
                md_opt(d.nb_conf),
                md_opt(d.trk_conf),
            ));
        }
    }
    out
}

/// Render a comparison in the requested format with stable field ordering.
pub fn report(comparison: &ComparisonReport, format: ReportFormat) -> Result<String> {
    comparison.validate()?;
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(comparison)?),
        ReportFormat::Csv => Ok(render_csv(comparison)),
        ReportFormat::Markdown => Ok(render_markdown(comparison)),
    }
}
