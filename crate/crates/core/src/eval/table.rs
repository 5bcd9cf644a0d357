//! Comparison tables in markdown or CSV.
//!
//! Rows are grouped by language (alphabetically by display name) and sorted
//! by descending macro F1 within a group; equal scores keep input order.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{EvalError, EvaluationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    #[default]
    Markdown,
    Csv,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TableOptions {
    /// Print scores as percentages with one decimal instead of fractions
    /// with three.
    pub percent: bool,
}

fn fmt_score(x: f64, opts: TableOptions) -> String {
    if opts.percent {
        format!("{:.1}", x * 100.0)
    } else {
        format!("{x:.3}")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn md_cell(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

pub fn render_table(
    reports: &[(String, EvaluationReport)],
    format: TableFormat,
) -> Result<String, EvalError> {
    render_table_with(reports, format, TableOptions::default())
}

pub fn render_table_with(
    reports: &[(String, EvaluationReport)],
    format: TableFormat,
    opts: TableOptions,
) -> Result<String, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::EmptyReportList);
    }
    let mut rows: Vec<&(String, EvaluationReport)> = reports.iter().collect();
    // Stable sort keeps input order among ties.
    rows.sort_by(|a, b| {
        a.1.language
            .display_name()
            .cmp(b.1.language.display_name())
            .then(b.1.macro_f1.total_cmp(&a.1.macro_f1))
    });

    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            out.push_str("language,run,macro_f1,hof_f1,not_f1,n\n");
            for (run, r) in rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.language.display_name(),
                    csv_field(run),
                    fmt_score(r.macro_f1, opts),
                    fmt_score(r.hof.f1, opts),
                    fmt_score(r.not.f1, opts),
                    r.matrix.total()
                )
                .expect("writing to String");
            }
        }
        TableFormat::Markdown => {
            let mut current = None;
            for (run, r) in rows {
                if current != Some(r.language) {
                    if current.is_some() {
                        out.push('\n');
                    }
                    current = Some(r.language);
                    writeln!(out, "### {}\n", r.language.display_name()).expect("writing to String");
                    out.push_str("| Run | Macro F1 | HOF F1 | NOT F1 | n |\n");
                    out.push_str("| --- | ---: | ---: | ---: | ---: |\n");
                }
                writeln!(
                    out,
                    "| {} | {} | {} | {} | {} |",
                    md_cell(run),
                    fmt_score(r.macro_f1, opts),
                    fmt_score(r.hof.f1, opts),
                    fmt_score(r.not.f1, opts),
                    r.matrix.total()
                )
                .expect("writing to String");
            }
        }
    }
    Ok(out)
}
