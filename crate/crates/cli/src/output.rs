//! CSV output with a `#` metadata header, and the optional plotting scripts.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::parser::ValueSource;
use clap::ArgMatches;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Header lines: tool version, subcommand, then every flag of the subcommand with its
/// resolved value, followed by `extra` facts about the run.
pub fn metadata(command: &str, matches: &ArgMatches, extra: &[(&str, String)]) -> Vec<String> {
    let mut lines = vec![format!("# spatial-csma {VERSION}"), format!("# command = {command}")];
    let mut ids: Vec<&str> = matches.ids().map(|id| id.as_str()).collect();
    ids.sort_unstable();
    for id in ids {
        let Some(values) = matches.get_raw(id) else { continue };
        let joined: Vec<String> = values.map(|v| v.to_string_lossy().into_owned()).collect();
        let source = match matches.value_source(id) {
            Some(ValueSource::DefaultValue) => " (default)",
            _ => "",
        };
        lines.push(format!("# {} = {}{source}", id.replace('_', "-"), joined.join(",")));
    }
    for (k, v) in extra {
        lines.push(format!("# {k} = {v}"));
    }
    lines
}

/// Destination of a subcommand's table: a file, or stdout when no path is given.
pub fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn write_header(w: &mut dyn Write, lines: &[String]) -> io::Result<()> {
    for l in lines {
        writeln!(w, "{l}")?;
    }
    Ok(())
}

pub fn csv_writer(w: Box<dyn Write>) -> csv::Writer<Box<dyn Write>> {
    csv::WriterBuilder::new().from_writer(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Sweep,
    Converge,
    Topology,
    Rates,
}

/// Path of the script written next to `csv`: `<csv>.plot.py`.
pub fn plot_script_path(csv: &Path) -> PathBuf {
    let mut name = csv.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".plot.py");
    csv.with_file_name(name)
}

pub fn write_plot_script(csv: &Path, kind: PlotKind) -> Result<PathBuf> {
    let path = plot_script_path(csv);
    let data = csv.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let body = match kind {
        PlotKind::Sweep => SWEEP_PLOT,
        PlotKind::Converge => CONVERGE_PLOT,
        PlotKind::Topology => TOPOLOGY_PLOT,
        PlotKind::Rates => RATES_PLOT,
    };
    let script =
        format!("{PLOT_PRELUDE}DATA = os.path.join(os.path.dirname(os.path.abspath(__file__)), {data:?})\n{body}");
    std::fs::write(&path, script).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

const PLOT_PRELUDE: &str = "#!/usr/bin/env python3
# Generated by spatial-csma. Needs pandas and matplotlib.
import os
import sys

import matplotlib.pyplot as plt
import pandas as pd

";

const SWEEP_PLOT: &str = r##"
df = pd.read_csv(DATA, comment="#")
fig, ax = plt.subplots()
for model, g in df.groupby("model"):
    agg = g.groupby("rate")["mean_link_queue"].agg(["mean", "std"]).reset_index()
    ax.errorbar(agg["rate"], agg["mean"], yerr=agg["std"].fillna(0), marker="o", capsize=3, label=model)
ax.set_xlabel("arrival rate per link")
ax.set_ylabel("average queue length per link")
ax.set_yscale("log")
ax.legend()
out = os.path.splitext(DATA)[0] + ".png"
fig.savefig(out, dpi=150, bbox_inches="tight")
print(out)
if "--show" in sys.argv:
    plt.show()
"##;

const CONVERGE_PLOT: &str = r##"
df = pd.read_csv(DATA, comment="#")
fig, ax = plt.subplots()
ax.plot(df["slot"], df["sir_total_queue"], label="sir")
ax.plot(df["slot"], df["graph_total_queue"], label="graph")
ax.set_xlabel("slot")
ax.set_ylabel("total queue length")
ax.legend()
out = os.path.splitext(DATA)[0] + ".png"
fig.savefig(out, dpi=150, bbox_inches="tight")
print(out)
if "--show" in sys.argv:
    plt.show()
"##;

const TOPOLOGY_PLOT: &str = r##"
df = pd.read_csv(DATA, comment="#")
fig, ax = plt.subplots()
ax.scatter(df["x"], df["y"], c=df["degree"], cmap="viridis")
for _, r in df.iterrows():
    ax.annotate(int(r["id"]), (r["x"], r["y"]), fontsize=7)
ax.set_aspect("equal")
ax.set_title("links coloured by close-in degree")
out = os.path.splitext(DATA)[0] + ".png"
fig.savefig(out, dpi=150, bbox_inches="tight")
print(out)
if "--show" in sys.argv:
    plt.show()
"##;

const RATES_PLOT: &str = r##"
df = pd.read_csv(DATA, comment="#")
fig, ax = plt.subplots()
ax.scatter(df["size"], df["sum"], s=8)
ax.set_xlabel("active links")
ax.set_ylabel("sum of success probabilities")
out = os.path.splitext(DATA)[0] + ".png"
fig.savefig(out, dpi=150, bbox_inches="tight")
print(out)
if "--show" in sys.argv:
    plt.show()
"##;
