use super::{EpisodeResult, HarnessError, Thresholds};
use crate::scene::Category;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: Category,
    pub episodes: usize,
    pub successes: usize,
    pub mean_iou: f64,
    pub mean_f1: f64,
    pub success_rate: f64,
    /// False when the category has no episodes.
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config_digest: String,
    pub rows: Vec<CategoryRow>,
}

/// `"9/10"`.
pub fn format_rate(successes: usize, episodes: usize) -> String {
    format!("{successes}/{episodes}")
}

/// Ordered reduction of episode results into one row per category.
pub fn aggregate(categories: &[Category], episodes: &[EpisodeResult], config_digest: &str) -> BenchmarkReport {
    let rows = categories
        .iter()
        .map(|&category| {
            let mine: Vec<&EpisodeResult> = episodes.iter().filter(|e| e.category == category).collect();
            let n = mine.len();
            let successes = mine.iter().filter(|e| e.success).count();
            let mean = |f: fn(&EpisodeResult) -> f64| if n == 0 { 0.0 } else { mine.iter().map(|e| f(e)).sum::<f64>() / n as f64 };
            CategoryRow {
                category,
                episodes: n,
                successes,
                mean_iou: mean(|e| e.iou),
                mean_f1: mean(|e| e.f1),
                success_rate: if n == 0 { 0.0 } else { successes as f64 / n as f64 },
                valid: n > 0,
            }
        })
        .collect();
    BenchmarkReport { config_digest: config_digest.to_string(), rows }
}

impl BenchmarkReport {
    /// Aligned `Category | IoU | F1 | SR` table.
    pub fn to_table(&self) -> String {
        let header = ["Category", "IoU", "F1", "SR"].map(String::from);
        let body: Vec<[String; 4]> = self
            .rows
            .iter()
            .map(|r| {
                if r.valid {
                    [
                        r.category.label().to_string(),
                        format!("{:.3}", r.mean_iou),
                        format!("{:.3}", r.mean_f1),
                        format!("{:.2} ({})", r.success_rate, format_rate(r.successes, r.episodes)),
                    ]
                } else {
                    [r.category.label().to_string(), "-".into(), "-".into(), "invalid (0 episodes)".into()]
                }
            })
            .collect();
        let mut widths = header.clone().map(|h| h.len());
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &[String; 4]| {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
            padded.join(" | ").trim_end().to_string() + "\n"
        };
        let mut out = format!("config {}\n", self.config_digest);
        out += &line(&header);
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        out += &(rule.join("-|-") + "\n");
        for row in &body {
            out += &line(row);
        }
        out
    }

    /// One JSON object per row.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let mut v = serde_json::to_value(r).expect("row serializes");
            v["config_digest"] = self.config_digest.clone().into();
            let _ = writeln!(out, "{v}");
        }
        out
    }

    /// Human-readable description of every threshold the report misses.
    pub fn violations(&self, t: &Thresholds) -> Vec<String> {
        let mut out = Vec::new();
        for r in &self.rows {
            let name = r.category.name();
            let any = t.min_iou.is_some() || t.min_f1.is_some() || t.min_success.is_some();
            if !r.valid {
                if any {
                    out.push(format!("{name}: no episodes"));
                }
                continue;
            }
            for (metric, value, min) in [("IoU", r.mean_iou, t.min_iou), ("F1", r.mean_f1, t.min_f1), ("success rate", r.success_rate, t.min_success)]
            {
                if let Some(min) = min.filter(|&m| value < m) {
                    out.push(format!("{name}: {metric} {value:.3} below {min}"));
                }
            }
        }
        out
    }
}

/// Writes `episodes.jsonl`, `report.txt` and `report.jsonl` into `dir`.
pub fn write_outputs(dir: &Path, episodes: &[EpisodeResult], report: &BenchmarkReport) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let log: String = episodes.iter().map(|e| serde_json::to_string(e).expect("episode serializes") + "\n").collect();
    for (name, text) in [("episodes.jsonl", log), ("report.txt", report.to_table()), ("report.jsonl", report.to_jsonl())] {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
    }
    Ok(())
}

pub fn read_episode_log(path: &Path) -> Result<Vec<EpisodeResult>, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| HarnessError::io(path, format!("line {}: {e}", i + 1))))
        .collect()
}
