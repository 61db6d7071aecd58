//! Plain tables rendered as CSV or aligned text, with VP/P/I/N level tags
//! and optional ANSI colouring.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::Result;
use crate::gains::{classify_level, AggregateRow, CorrelationReport, GainRecord, Level};

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub text: String,
    pub level: Option<Level>,
}

impl Cell {
    pub fn plain(text: impl Into<String>) -> Self {
        Cell {
            text: text.into(),
            level: None,
        }
    }

    /// A gain cell such as `+12.50 VP`.
    pub fn gain(r: f64) -> Self {
        let level = classify_level(r);
        Cell {
            text: format!("{r:+.2} {}", level.tag()),
            level: Some(level),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

fn ansi_code(level: Level) -> &'static str {
    match level {
        Level::VeryPositive => "1;32",
        Level::Positive => "32",
        Level::Insignificant => "2",
        Level::Negative => "35",
    }
}

impl Table {
    pub fn new(title: impl Into<String>, header: &[&str]) -> Self {
        Table {
            title: title.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| c.text.as_str()))?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Left-aligned first column, right-aligned value columns. With `ansi`,
    /// level cells are coloured after padding so alignment is unaffected.
    pub fn to_text(&self, ansi: bool) -> String {
        let cols = self
            .header
            .len()
            .max(self.rows.iter().map(Vec::len).max().unwrap_or(0));
        let mut widths = vec![0; cols];
        for (i, h) in self.header.iter().enumerate() {
            widths[i] = widths[i].max(h.chars().count());
        }
        for row in &self.rows {
            for (i, c) in row.iter().enumerate() {
                widths[i] = widths[i].max(c.text.chars().count());
            }
        }
        let pad = |i: usize, s: &str| {
            if i == 0 {
                format!("{s:<w$}", w = widths[i])
            } else {
                format!("{s:>w$}", w = widths[i])
            }
        };
        let mut out = format!("{}\n", self.title);
        let line: Vec<String> = self
            .header
            .iter()
            .enumerate()
            .map(|(i, h)| pad(i, h))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        let rule: usize = widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1);
        out.push_str(&"-".repeat(rule));
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let s = pad(i, &c.text);
                    match c.level {
                        Some(l) if ansi => format!("\x1b[{}m{s}\x1b[0m", ansi_code(l)),
                        _ => s,
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

/// Targets as rows, sources as columns; each cell is the mean gain over
/// seeds with its level. Rows and columns are sorted by name.
pub fn gain_table(records: &[GainRecord]) -> Table {
    let mut targets = BTreeSet::new();
    let mut sources = BTreeSet::new();
    let mut sums: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    for r in records {
        let Some(src) = r.source() else { continue };
        let (t, s) = (r.result.target.to_string(), src.to_string());
        targets.insert(t.clone());
        sources.insert(s.clone());
        let e = sums.entry((t, s)).or_insert((0.0, 0));
        e.0 += r.gain;
        e.1 += 1;
    }
    let mut header = vec!["target"];
    header.extend(sources.iter().map(String::as_str));
    let mut table = Table::new("relative gain r (%) by target and source", &header);
    for t in &targets {
        let mut row = vec![Cell::plain(t.clone())];
        for s in &sources {
            row.push(match sums.get(&(t.clone(), s.clone())) {
                Some(&(sum, n)) => Cell::gain(sum / n as f64),
                None => Cell::plain("-"),
            });
        }
        table.rows.push(row);
    }
    table
}

/// One row per record.
pub fn records_table(records: &[GainRecord]) -> Table {
    let mut table = Table::new(
        "transfer results",
        &["key", "source", "target", "seed", "metric", "baseline", "r"],
    );
    for r in records {
        table.rows.push(vec![
            Cell::plain(r.result.key.clone()),
            Cell::plain(r.result.source.to_string()),
            Cell::plain(r.result.target.to_string()),
            Cell::plain(r.result.seed.to_string()),
            Cell::plain(format!("{:.6}", r.result.metric.value)),
            Cell::plain(format!("{:.6}", r.result.baseline_metric.value)),
            Cell::gain(r.gain),
        ]);
    }
    table
}

pub fn aggregate_table(rows: &[AggregateRow]) -> Table {
    let mut table = Table::new(
        "share of experiments per level (%)",
        &["domain", "task", "P", "VP", "N", "count"],
    );
    for a in rows {
        table.rows.push(vec![
            Cell::plain(a.domain.as_str()),
            Cell::plain(a.task.as_str()),
            Cell {
                text: format!("{:.1}", a.pct_p),
                level: Some(Level::Positive),
            },
            Cell {
                text: format!("{:.1}", a.pct_vp),
                level: Some(Level::VeryPositive),
            },
            Cell {
                text: format!("{:.1}", a.pct_n),
                level: Some(Level::Negative),
            },
            Cell::plain(a.count.to_string()),
        ]);
    }
    table
}

pub fn best_table(best: &[GainRecord]) -> Table {
    let mut table = Table::new("best source per target", &["target", "source", "seed", "r"]);
    for r in best {
        table.rows.push(vec![
            Cell::plain(r.result.target.to_string()),
            Cell::plain(r.result.source.to_string()),
            Cell::plain(r.result.seed.to_string()),
            Cell::gain(r.gain),
        ]);
    }
    table
}

pub fn correlation_table(report: &CorrelationReport) -> Table {
    let mut table = Table::new("Kendall tau against gains", &["factor", "tau", "count"]);
    for row in &report.rows {
        table.rows.push(vec![
            Cell::plain(row.factor.clone()),
            Cell::plain(
                row.tau
                    .map_or_else(|| "n/a".to_string(), |t| format!("{t:.4}")),
            ),
            Cell::plain(row.count.to_string()),
        ]);
    }
    table
}
