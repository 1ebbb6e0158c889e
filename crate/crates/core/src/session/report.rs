use std::fmt::Write as _;
use std::io::{self, Write};

use crate::distillation::DistillationRecord;
use crate::randomness::Seed;

/// Secret bits per 2^15-bit block reported for the 250 km prototype run,
/// printed next to the simulated value for comparison.
pub const REFERENCE_SECRET_BITS_PER_BLOCK: usize = 7000;

#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    pub seed: Seed,
    pub link_length_km: f64,
    pub blocks: Vec<DistillationRecord>,
    /// Simulated time spent on the initial interferometer alignment.
    pub alignment_time_s: f64,
    /// Simulated wall-clock duration, alignment included.
    pub duration_s: f64,
    pub messages: usize,
    pub abort_reason: Option<String>,
}

impl SessionReport {
    pub fn secret_bits(&self) -> usize {
        self.blocks.iter().map(|b| b.secret_len).sum()
    }

    /// Sum of secret lengths over the simulated duration.
    pub fn average_secret_rate(&self) -> f64 {
        if self.duration_s > 0.0 {
            self.secret_bits() as f64 / self.duration_s
        } else {
            0.0
        }
    }

    pub fn average_qber(&self) -> f64 {
        let n: usize = self.blocks.iter().map(|b| b.n_sifted).sum();
        if n == 0 {
            return 0.0;
        }
        self.blocks
            .iter()
            .map(|b| b.qber * b.n_sifted as f64)
            .sum::<f64>()
            / n as f64
    }

    /// `(sim_time_s, visibility used for the bound)` per block.
    pub fn visibility_series(&self) -> Vec<(f64, f64)> {
        self.blocks
            .iter()
            .map(|b| (b.sim_time_s, b.visibility))
            .collect()
    }

    pub fn mean_secret_per_block(&self) -> f64 {
        if self.blocks.is_empty() {
            0.0
        } else {
            self.secret_bits() as f64 / self.blocks.len() as f64
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "block_id,n_sifted,qber,visibility,leaked_bits,secret_len,sim_time_s"
        )?;
        for b in &self.blocks {
            writeln!(
                out,
                "{},{},{:.6},{:.6},{},{},{:.3}",
                b.block_id,
                b.n_sifted,
                b.qber,
                b.visibility,
                b.leaked_bits,
                b.secret_len,
                b.sim_time_s
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "link length        {:.1} km", self.link_length_km);
        let _ = writeln!(s, "seed               {}", self.seed.to_hex());
        let _ = writeln!(
            s,
            "simulated time     {:.1} s (alignment {:.1} s)",
            self.duration_s, self.alignment_time_s
        );
        let _ = writeln!(s, "blocks distilled   {}", self.blocks.len());
        let _ = writeln!(s, "classical messages {}", self.messages);
        let _ = writeln!(s, "average QBER       {:.4}", self.average_qber());
        let _ = writeln!(s, "secret bits        {}", self.secret_bits());
        let _ = writeln!(
            s,
            "secret rate        {:.2} bit/s",
            self.average_secret_rate()
        );
        let _ = writeln!(
            s,
            "secret per block   {:.0} bits (default bound); reference prototype ~{} bits",
            self.mean_secret_per_block(),
            REFERENCE_SECRET_BITS_PER_BLOCK
        );
        for b in &self.blocks {
            let mark = if b.visibility_reliable {
                String::new()
            } else {
                format!(
                    "  [monitor unreliable: measured {:.3}, floor applied]",
                    b.measured_visibility
                )
            };
            let _ = writeln!(
                s,
                "  block {:>3}: qber {:.4}  V {:.3}  leaked {:>5}  secret {:>5}  auth {:>5}  t {:.1} s{}{}",
                b.block_id,
                b.qber,
                b.visibility,
                b.leaked_bits,
                b.secret_len,
                b.auth_bits_used,
                b.sim_time_s,
                if b.confirmed { "" } else { "  [not confirmed]" },
                mark
            );
        }
        if let Some(reason) = &self.abort_reason {
            let _ = writeln!(s, "aborted: {reason}");
        }
        s
    }
}
