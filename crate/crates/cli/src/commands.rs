use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use cowqkd::distillation::{binary_entropy, compute_secret_length};
use cowqkd::photonic::{analytic_rates, LinkParams, RatePrediction};
use cowqkd::protocol::{
    bob_decode, estimate_visibility, generate_frame, sift, simulate_alignment,
    simulate_transmission, AlignmentTrace, VisibilityEstimate,
};
use cowqkd::randomness::BitSource;
use cowqkd::session::{run_session, SessionOutcome, UnreliablePolicy};

use crate::config::ExperimentConfig;
use crate::CliError;

/// Monte-Carlo columns of a sweep row.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPoint {
    pub slots: u64,
    pub sifted_bits: usize,
    pub qber: f64,
    pub visibility: VisibilityEstimate,
    pub secret_rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub length_km: f64,
    pub total_loss_db: f64,
    pub analytic: RatePrediction,
    pub simulated: Option<SimulatedPoint>,
}

fn sim_error(e: impl std::fmt::Display) -> CliError {
    CliError::Simulation(e.to_string())
}

/// Simulates `cfg.slots` slots over `link` and prices the result with the
/// same block-level secret fraction as the analytic model.
pub fn simulate_point(
    cfg: &ExperimentConfig,
    link: &LinkParams,
    source: &BitSource,
) -> Result<SimulatedPoint, CliError> {
    let frame = generate_frame(
        &mut source.fork_str("frame"),
        cfg.slots,
        link.protocol.decoy_fraction,
    )
    .map_err(sim_error)?;
    let record = simulate_transmission(&frame, link, &mut source.fork_str("transmission"))
        .map_err(sim_error)?;
    let sifted = sift(&frame, &bob_decode(&record)).map_err(sim_error)?;
    let visibility = estimate_visibility(&record, &frame, link, &cfg.session.visibility_policy)
        .map_err(sim_error)?;
    let qber = sifted.error_rate();

    let used = if visibility.reliable {
        Some(visibility.visibility)
    } else {
        match cfg.session.unreliable_visibility {
            UnreliablePolicy::ProceedWithFloor(f) => Some(f),
            UnreliablePolicy::Abort => None,
        }
    };
    let n = cfg.model.block_size.max(1);
    let fraction = match used {
        Some(v) if !sifted.is_empty() => {
            let leak = (cfg.model.leak_efficiency * n as f64 * binary_entropy(qber)).ceil();
            compute_secret_length(
                n,
                leak as usize,
                v,
                cfg.model.epsilon_pa,
                cfg.model.eve_bound,
            ) as f64
                / n as f64
        }
        _ => 0.0,
    };
    let sifted_rate = sifted.len() as f64 / cfg.slots as f64 * link.source.bit_rate_hz();
    Ok(SimulatedPoint {
        slots: cfg.slots,
        sifted_bits: sifted.len(),
        qber,
        visibility,
        secret_rate_hz: sifted_rate * fraction,
    })
}

/// One row per configured length, in length order. Rows are computed in
/// parallel, each from its own fork of the run seed.
pub fn sweep_rows(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>, CliError> {
    let root = BitSource::new(cfg.seed);
    cfg.lengths_km
        .par_iter()
        .map(|&length_km| {
            let link = cfg.link_at(length_km);
            let analytic = analytic_rates(&link, &cfg.model).map_err(sim_error)?;
            let simulated = if cfg.analytic_only {
                None
            } else {
                let source = root.fork_str(&format!("sweep/{length_km}"));
                Some(simulate_point(cfg, &link, &source)?)
            };
            Ok(SweepRow {
                length_km,
                total_loss_db: link.fibre.total_loss_db(),
                analytic,
                simulated,
            })
        })
        .collect()
}

fn header_comment(cfg: &ExperimentConfig) -> String {
    format!("# seed={} config={}", cfg.seed.to_hex(), cfg.hash())
}

pub fn write_sweep<W: Write>(
    cfg: &ExperimentConfig,
    rows: &[SweepRow],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "{}", header_comment(cfg))?;
    writeln!(
        out,
        "length_km,total_loss_db,analytic_qber,analytic_secret_rate_hz,sim_qber,sim_secret_rate_hz,visibility,visibility_reliable"
    )?;
    for r in rows {
        let (sim_q, sim_r, vis, reliable) = match &r.simulated {
            Some(s) => (
                format!("{:.6}", s.qber),
                format!("{:.4}", s.secret_rate_hz),
                s.visibility.visibility,
                s.visibility.reliable.to_string(),
            ),
            None => (
                String::new(),
                String::new(),
                r.analytic.expected_visibility,
                String::new(),
            ),
        };
        writeln!(
            out,
            "{},{:.4},{:.6},{:.4},{},{},{:.6},{}",
            r.length_km,
            r.total_loss_db,
            r.analytic.qber,
            r.analytic.secret_rate_hz,
            sim_q,
            sim_r,
            vis,
            reliable
        )?;
    }
    Ok(())
}

pub fn write_predict<W: Write>(
    cfg: &ExperimentConfig,
    rows: &[SweepRow],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "{}", header_comment(cfg))?;
    writeln!(
        out,
        "length_km,total_loss_db,transmittance,p_signal,p_dark,sifted_rate_hz,qber,expected_visibility,secret_rate_hz"
    )?;
    for r in rows {
        let a = &r.analytic;
        writeln!(
            out,
            "{},{:.4},{:e},{:e},{:e},{:.4},{:.6},{:.6},{:.4}",
            r.length_km,
            r.total_loss_db,
            a.transmittance,
            a.p_signal,
            a.p_dark,
            a.sifted_rate_hz,
            a.qber,
            a.expected_visibility,
            a.secret_rate_hz
        )?;
    }
    Ok(())
}

pub fn run_alignment(cfg: &ExperimentConfig) -> Result<AlignmentTrace, CliError> {
    let mut source = BitSource::new(cfg.seed).fork_str("alignment");
    simulate_alignment(&cfg.link(), &cfg.session.alignment, &mut source).map_err(sim_error)
}

pub fn write_alignment<W: Write>(
    cfg: &ExperimentConfig,
    trace: &AlignmentTrace,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "{}", header_comment(cfg))?;
    trace.write_csv(out)
}

pub fn run_session_cmd(cfg: &ExperimentConfig) -> Result<SessionOutcome, CliError> {
    run_session(&cfg.link(), &cfg.session, cfg.seed).map_err(sim_error)
}

pub fn write_session_csv<W: Write>(
    cfg: &ExperimentConfig,
    outcome: &SessionOutcome,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "{}", header_comment(cfg))?;
    outcome.report.write_csv(out)
}

/// Where the transcript of a session written to `csv` goes.
pub fn transcript_path(csv: &Path) -> PathBuf {
    csv.with_extension("transcript")
}

pub(crate) fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    f(&mut w).map_err(io)?;
    w.flush().map_err(io)
}
