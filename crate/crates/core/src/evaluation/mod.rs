//! Benchmark harness: multiple-choice and generative scoring against any
//! model exposing loglikelihood and generation, plus report arithmetic.

mod extract;
mod harness;
mod report;

pub use extract::{extract_flexible, extract_strict, normalize_numeric, STRICT_MARKER};
pub use harness::{
    eval_generative, eval_multiple_choice, EvalModel, ExtractionMode, GenItem, GenScore, GenTask,
    McItem, McScores, McTask, RiggedModel, TokenizedLm,
};
pub use report::{render_report, table_average, EvalReport, ReportRow};
