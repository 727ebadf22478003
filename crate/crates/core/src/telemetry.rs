//! Per-tick telemetry rows, the CSV writer and the run summary.

use std::fmt::Write as _;
use std::io::{self, Write};

/// One controller tick. Measured and estimated quantities are taken at the
/// start of the tick, commands are those applied over the tick, and the
/// energies are cumulative to its end. Torques and forces are per wheel;
/// flags are 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TelemetryRecord {
    pub t: f64,
    pub surface: usize,
    pub v_ref: f64,
    pub a_ref: f64,
    pub v_true: f64,
    pub v_meas: f64,
    pub omega_f_true: f64,
    pub omega_f_meas: f64,
    pub omega_r_true: f64,
    pub omega_r_meas: f64,
    pub mu_f_true: f64,
    pub mu_r_true: f64,
    pub mu_f_est: f64,
    pub mu_r_est: f64,
    pub b_est: f64,
    pub b_std: f64,
    pub c_est: f64,
    pub c_std: f64,
    pub d_est: f64,
    pub d_std: f64,
    pub e_est: f64,
    pub e_std: f64,
    pub d_true: f64,
    pub s2_est: f64,
    pub s2_pred: f64,
    pub tau_p: bool,
    pub tau_s: bool,
    pub tau_a: bool,
    pub tau_r: bool,
    pub w1: f64,
    pub v_pred: f64,
    /// Capped at `V_CRIT_CAP` when the vehicle does not oversteer.
    pub v_crit: f64,
    pub u_f_driver: f64,
    pub u_r_driver: f64,
    pub u_f_tval: f64,
    pub u_r_tval: f64,
    pub u_f: f64,
    pub u_r: f64,
    pub fz: [f64; 4],
    pub fx: [f64; 4],
    pub power: f64,
    pub energy: f64,
    pub energy_regen: f64,
}

pub const V_CRIT_CAP: f64 = 999.0;

pub const COLUMNS: [&str; 51] = [
    "t",
    "surface",
    "v_ref",
    "a_ref",
    "v_true",
    "v_meas",
    "omega_f_true",
    "omega_f_meas",
    "omega_r_true",
    "omega_r_meas",
    "mu_f_true",
    "mu_r_true",
    "mu_f_est",
    "mu_r_est",
    "b_est",
    "b_std",
    "c_est",
    "c_std",
    "d_est",
    "d_std",
    "e_est",
    "e_std",
    "d_true",
    "s2_est",
    "s2_pred",
    "tau_p",
    "tau_s",
    "tau_a",
    "tau_r",
    "w1",
    "v_pred",
    "v_crit",
    "u_f_driver",
    "u_r_driver",
    "u_f_tval",
    "u_r_tval",
    "u_f",
    "u_r",
    "fz_fl",
    "fz_fr",
    "fz_rl",
    "fz_rr",
    "fx_fl",
    "fx_fr",
    "fx_rl",
    "fx_rr",
    "power",
    "energy",
    "energy_regen",
    "s2_ratio",
    "d_error",
];

impl TelemetryRecord {
    pub fn values(&self) -> [f64; 51] {
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        let ratio = if self.s2_est > 0.0 {
            self.s2_pred / self.s2_est
        } else {
            0.0
        };
        [
            self.t,
            self.surface as f64,
            self.v_ref,
            self.a_ref,
            self.v_true,
            self.v_meas,
            self.omega_f_true,
            self.omega_f_meas,
            self.omega_r_true,
            self.omega_r_meas,
            self.mu_f_true,
            self.mu_r_true,
            self.mu_f_est,
            self.mu_r_est,
            self.b_est,
            self.b_std,
            self.c_est,
            self.c_std,
            self.d_est,
            self.d_std,
            self.e_est,
            self.e_std,
            self.d_true,
            self.s2_est,
            self.s2_pred,
            flag(self.tau_p),
            flag(self.tau_s),
            flag(self.tau_a),
            flag(self.tau_r),
            self.w1,
            self.v_pred,
            self.v_crit,
            self.u_f_driver,
            self.u_r_driver,
            self.u_f_tval,
            self.u_r_tval,
            self.u_f,
            self.u_r,
            self.fz[0],
            self.fz[1],
            self.fz[2],
            self.fz[3],
            self.fx[0],
            self.fx[1],
            self.fx[2],
            self.fx[3],
            self.power,
            self.energy,
            self.energy_regen,
            ratio,
            self.d_est - self.d_true,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

pub fn write_header<W: Write>(out: &mut W) -> io::Result<()> {
    writeln!(out, "{}", COLUMNS.join(","))
}

/// Shortest round-trip formatting, so equal runs give identical bytes.
pub fn write_record<W: Write>(out: &mut W, rec: &TelemetryRecord) -> io::Result<()> {
    let mut line = String::with_capacity(COLUMNS.len() * 12);
    for (i, v) in rec.values().iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        write!(line, "{v}").unwrap();
    }
    line.push('\n');
    out.write_all(line.as_bytes())
}

pub fn write_csv<W: Write>(out: &mut W, records: &[TelemetryRecord]) -> io::Result<()> {
    write_header(out)?;
    records.iter().try_for_each(|r| write_record(out, r))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSummary {
    pub label: String,
    pub t_start: f64,
    pub t_end: f64,
    pub d_true: f64,
    /// Estimate and spread on the segment's last tick.
    pub d_est: f64,
    pub d_std: f64,
    /// Time the blend weight first reached 1 in this segment.
    pub full_engagement: Option<f64>,
    pub active_ticks: usize,
}

impl SegmentSummary {
    pub fn d_error(&self) -> f64 {
        (self.d_est - self.d_true).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub mode: String,
    pub seed: u64,
    pub particles: usize,
    pub ticks: usize,
    pub duration: f64,
    pub energy: f64,
    pub energy_regen: f64,
    pub speed_rmse: f64,
    pub max_w1_step: f64,
    pub stability_denials: usize,
    pub availability_denials: usize,
    pub filter_recoveries: usize,
    pub segments: Vec<SegmentSummary>,
    pub failure: Option<String>,
}

impl Summary {
    pub fn mean_power(&self) -> f64 {
        if self.duration > 0.0 {
            self.energy / self.duration
        } else {
            0.0
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("mode", self.mode.clone());
        kv("seed", self.seed.to_string());
        kv("particles", self.particles.to_string());
        kv("ticks", self.ticks.to_string());
        kv("duration_s", format!("{:.3}", self.duration));
        kv(
            "status",
            self.failure.clone().unwrap_or_else(|| "completed".into()),
        );
        kv("energy_j", format!("{:.1}", self.energy));
        kv("energy_regen_j", format!("{:.1}", self.energy_regen));
        kv("mean_power_w", format!("{:.1}", self.mean_power()));
        kv("speed_rmse_mps", format!("{:.4}", self.speed_rmse));
        kv("max_w1_step", format!("{:.6}", self.max_w1_step));
        kv("stability_denial_ticks", self.stability_denials.to_string());
        kv(
            "availability_denial_ticks",
            self.availability_denials.to_string(),
        );
        kv("filter_recoveries", self.filter_recoveries.to_string());
        kv("segments", self.segments.len().to_string());
        for (i, g) in self.segments.iter().enumerate() {
            let p = format!("segment.{i}");
            kv(&format!("{p}.label"), g.label.clone());
            kv(&format!("{p}.t_start"), format!("{:.2}", g.t_start));
            kv(&format!("{p}.t_end"), format!("{:.2}", g.t_end));
            kv(&format!("{p}.d_true"), format!("{:.4}", g.d_true));
            kv(&format!("{p}.d_est"), format!("{:.4}", g.d_est));
            kv(&format!("{p}.d_std"), format!("{:.4}", g.d_std));
            kv(&format!("{p}.d_error"), format!("{:.4}", g.d_error()));
            kv(
                &format!("{p}.full_engagement_s"),
                g.full_engagement
                    .map_or_else(|| "none".into(), |t| format!("{t:.2}")),
            );
            kv(&format!("{p}.active_ticks"), g.active_ticks.to_string());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_matches_values() {
        let r = TelemetryRecord {
            t: 0.5,
            tau_s: true,
            w1: 0.25,
            ..Default::default()
        };
        let mut buf = Vec::new();
        write_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header: Vec<_> = lines.next().unwrap().split(',').collect();
        let row: Vec<f64> = lines
            .next()
            .unwrap()
            .split(',')
            .map(|v| v.parse().unwrap())
            .collect();
        assert_eq!(header.len(), row.len());
        let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
        assert_eq!(col("t"), 0.5);
        assert_eq!(col("tau_s"), 1.0);
        assert_eq!(col("tau_p"), 0.0);
        assert_eq!(col("w1"), 0.25);
    }

    #[test]
    fn summary_text_is_key_value() {
        let s = Summary {
            mode: "tval".into(),
            seed: 3,
            particles: 100,
            ticks: 10,
            duration: 0.1,
            energy: 5.0,
            energy_regen: 4.0,
            speed_rmse: 0.0,
            max_w1_step: 0.01,
            stability_denials: 0,
            availability_denials: 0,
            filter_recoveries: 0,
            segments: vec![],
            failure: None,
        };
        let text = s.to_text();
        assert!(text.lines().all(|l| l.split_once(" = ").is_some()));
        assert!(text.contains("mean_power_w = 50.0"));
    }
}
