//! Result files: trajectory and control CSVs, the summary table, plot script.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use robust_synth::synthesis::write_control_schedule;
use robust_synth::{Pattern, Provenance, Result, System, Trajectory};

pub fn fmt_state(y: &[f64]) -> String {
    y.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

pub struct SummaryRow<'a> {
    pub method: &'a str,
    pub k_per_axis: usize,
    pub horizon: usize,
    pub robust: bool,
    pub initial_state: &'a [f64],
    pub value: f64,
    pub metric: Option<f64>,
    pub achieved_value: Option<f64>,
    pub achieved_metric: Option<f64>,
    pub wall_seconds: f64,
    pub provenance: Provenance,
    pub h_status: &'a str,
}

/// `summary.csv`, mirrored to standard output. Numbers are written with
/// Rust's shortest round-trip formatting.
pub struct SummaryWriter {
    file: BufWriter<File>,
}

const SUMMARY_HEADER: &str =
    "method,K,horizon,robust,initial_state,value,metric,achieved_value,achieved_metric,wall_seconds,provenance,h_status";

impl SummaryWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = BufWriter::new(File::create(path)?);
        writeln!(file, "{SUMMARY_HEADER}")?;
        println!("{SUMMARY_HEADER}");
        Ok(Self { file })
    }

    pub fn push(&mut self, row: &SummaryRow<'_>) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let line = format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            row.method,
            row.k_per_axis,
            row.horizon,
            row.robust,
            fmt_state(row.initial_state),
            row.value,
            opt(row.metric),
            opt(row.achieved_value),
            opt(row.achieved_metric),
            row.wall_seconds,
            row.provenance,
            row.h_status
        );
        writeln!(self.file, "{line}")?;
        println!("{line}");
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.file.flush()?;
        Ok(())
    }
}

pub fn write_run_files(dir: &Path, system: &System, trajectory: &Trajectory<f64>, pattern: &Pattern<f64>) -> Result<()> {
    let mut t = BufWriter::new(File::create(dir.join("trajectory.csv"))?);
    trajectory.write_csv(&mut t)?;
    t.flush()?;
    let mut c = BufWriter::new(File::create(dir.join("control.csv"))?);
    write_control_schedule(&mut c, system, pattern)?;
    c.flush()?;
    Ok(())
}

/// gnuplot script next to the CSVs. Four-dimensional states get the
/// two-spin layout: `q1` plane top left, `q2` plane top right, control below.
pub fn write_plot_script(dir: &Path, dim: usize, metric: Option<&str>) -> Result<()> {
    let mut s = String::from(
        "set terminal pngcairo size 1000,800\n\
         set output 'plot.png'\n\
         set datafile separator ','\n\
         set key autotitle columnhead\n\
         set multiplot\n",
    );
    if dim == 4 {
        s.push_str(
            "set size 0.5,0.5\n\
             set origin 0,0.5\n\
             set size ratio -1\n\
             set title 'q1 = (y1, z1)'\n\
             plot 'trajectory.csv' using 2:3 with lines notitle\n\
             set origin 0.5,0.5\n\
             set title 'q2 = (y2, z2)'\n\
             plot 'trajectory.csv' using 4:5 with lines notitle\n\
             set size noratio\n",
        );
    } else {
        s.push_str("set size 1,0.5\nset origin 0,0.5\nset title 'state'\nset xlabel 't'\n");
        let series: Vec<String> = (0..dim)
            .map(|i| format!("'trajectory.csv' using 1:{} with lines title 'y{}'", i + 2, i + 1))
            .collect();
        s.push_str(&format!("plot {}\n", series.join(", ")));
    }
    s.push_str(
        "set size 1,0.5\n\
         set origin 0,0\n\
         set title 'control'\n\
         set xlabel 't'\n\
         plot 'control.csv' using 2:4 with steps notitle\n\
         unset multiplot\n",
    );
    if let Some(label) = metric {
        s.insert_str(0, &format!("# terminal metric: {label}\n"));
    }
    std::fs::write(dir.join("plot.gp"), s)?;
    Ok(())
}
