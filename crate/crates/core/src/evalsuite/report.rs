use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BleuReport, EfficiencyReport, SimilarityReport};
use crate::error::Result;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_utts: usize,
    pub unit_accuracy: Option<f64>,
    pub bleu: Option<BleuReport>,
    pub similarity: Option<SimilarityReport>,
    pub efficiency: Option<EfficiencyReport>,
}

impl EvalReport {
    pub fn summary(&self) -> String {
        let mut s = format!("utterances: {}\n", self.n_utts);
        if let Some(a) = self.unit_accuracy {
            s += &format!("unit accuracy: {:.2}%\n", 100.0 * a);
        }
        if let Some(b) = &self.bleu {
            let p: Vec<String> = b.precisions.iter().map(|p| p.map_or("-".into(), |v| format!("{:.1}", 100.0 * v))).collect();
            s += &format!("BLEU: {:.2} ({}; bp {:.3}; hyp/ref {}/{})\n", b.bleu, p.join("/"), b.bp, b.hyp_len, b.ref_len);
        }
        if let Some(sim) = &self.similarity {
            s += &format!("speaker similarity: {:.4} over {} pairs\n", sim.mean, sim.per_pair.len());
        }
        if let Some(e) = &self.efficiency {
            s += &format!(
                "inference: {:.3} s/utt, RTF {:.3}, {:.2} tokens/s ({} utts)\n",
                e.mean_inference_seconds, e.rtf, e.tokens_per_sec, e.n_utts
            );
        }
        s
    }
}

/// Writes `report.json`, `summary.txt` and one record per metric to `records.jsonl`.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    std::fs::write(dir.join("summary.txt"), report.summary())?;
    let mut f = std::fs::File::create(dir.join("records.jsonl"))?;
    let mut line = |metric: &str, value: serde_json::Value| writeln!(f, "{}", serde_json::json!({ "metric": metric, "value": value }));
    if let Some(a) = report.unit_accuracy {
        line("unit_accuracy", a.into())?;
    }
    if let Some(b) = &report.bleu {
        line("bleu", serde_json::to_value(b)?)?;
    }
    if let Some(s) = &report.similarity {
        line("speaker_similarity", serde_json::to_value(s)?)?;
    }
    if let Some(e) = &report.efficiency {
        line("efficiency", serde_json::to_value(e)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn files_written() {
        let dir = tempfile::tempdir().unwrap();
        let r = EvalReport { n_utts: 2, unit_accuracy: Some(0.5), ..Default::default() };
        write_report(dir.path(), &r).unwrap();
        let back: EvalReport = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(std::fs::read_to_string(dir.path().join("summary.txt")).unwrap().contains("50.00%"));
        assert_eq!(std::fs::read_to_string(dir.path().join("records.jsonl")).unwrap().lines().count(), 1);
    }
}
