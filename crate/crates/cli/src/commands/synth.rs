use std::path::PathBuf;

use clap::Args;
use ratnmf::data::{synthesize, SynthKind, SynthSpec};
use ratnmf::rational::{RationalModel, UniquenessReport};
use serde::{Deserialize, Serialize};

use super::{matrix_text, signals_text, Context};
use crate::error::CliResult;
use crate::manifest::{to_json, Recorder, RunStatus};

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SynthArgs {
    /// Number of observations (columns of Y)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Number of discretization points
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// Rank
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    /// Numerator degree (even)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d1: Option<usize>,
    /// Denominator degree (even)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d2: Option<usize>,
    /// Signal-to-noise ratio in dB; omit for noiseless data
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr: Option<f64>,
    /// Draw the columns of A from this `tau,s1,...` file instead
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signals: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct SynthSettings {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub d1: usize,
    pub d2: usize,
    pub snr: Option<f64>,
    pub signals: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            n: 20,
            m: 250,
            r: 3,
            d1: 4,
            d2: 4,
            snr: None,
            signals: None,
            out: PathBuf::from("."),
            seed: 0,
            threads: None,
        }
    }
}

#[derive(Serialize)]
struct TrueModels<'a> {
    models: &'a [RationalModel],
    uniqueness: &'a UniquenessReport,
    attempts: usize,
    uniqueness_warning: bool,
}

pub fn run(ctx: &Context, args: &SynthArgs) -> CliResult<String> {
    let (s, layer) = ctx.resolve::<SynthSettings>("synth", args)?;
    let kind = match &s.signals {
        Some(p) => SynthKind::FromSignalsCsv(p.clone()),
        None => SynthKind::PurelySynthetic,
    };
    let spec = SynthSpec {
        n: s.n,
        m: s.m,
        r: s.r,
        d1: s.d1,
        d2: s.d2,
        snr_db: s.snr,
        seed: s.seed,
        kind,
    };
    spec.validate()?;
    let rec = Recorder::new("synth", &ctx.argv, s.seed, layer, &s.out)?;
    rec.run(|rec| {
        if let Some(p) = &s.signals {
            rec.input(p)?;
        }
        let data = synthesize(&spec)?;
        rec.write("Y.csv", &signals_text(&data.grid, &data.y, "y")?)?;
        rec.write("A_true.csv", &signals_text(&data.grid, &data.a_true, "a")?)?;
        rec.write(
            "A_true.json",
            &to_json(&TrueModels {
                models: &data.models,
                uniqueness: &data.uniqueness,
                attempts: data.attempts,
                uniqueness_warning: data.uniqueness_warning,
            }),
        )?;
        rec.write("X_true.csv", &matrix_text(&data.x_true, "x"))?;
        let summary = format!(
            "synth: Y {}x{}, r = {}, uniqueness {} -> {}",
            data.y.nrows(),
            data.y.ncols(),
            s.r,
            if data.uniqueness.holds { "holds" } else { "not certified" },
            s.out.display()
        );
        Ok((RunStatus::Complete, summary))
    })
}
