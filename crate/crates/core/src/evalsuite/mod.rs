//! Evaluation: corpus BLEU, speaker similarity, efficiency timing, toy
//! transcription and report files.

mod bleu;
mod efficiency;
mod report;
mod similarity;
mod transcribe;

pub use bleu::{bleu, bleu_text, tokenize, BleuReport};
pub use efficiency::{measure_efficiency, report_from_totals, BenchConfig, EfficiencyReport, Pipeline, SleepPipeline};
pub use report::{EvalReport, write_report};
pub use similarity::{speaker_similarity, AdapterEmbedder, SimilarityReport, SpeakerEmbedder};
pub use transcribe::{calibrate_manifest, canonical_frame_labels, Calibration, transcribe_toy, UnitSymbolMap, UNK};
