use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use qstrat_core::frequency::geometric_radii;
use qstrat_core::QPoint;
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] qstrat_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
            CliError::Json(_) => "json",
            CliError::Csv(_) => "csv",
        }
    }

    pub fn exit_code(&self) -> i32 {
        let validation = match self {
            CliError::Core(e) => {
                e.is_validation()
                    || matches!(
                        e,
                        qstrat_core::Error::Format(_) | qstrat_core::Error::SizeMismatch { .. }
                    )
            }
            CliError::Usage(_) | CliError::Csv(_) => true,
            CliError::Io(_) | CliError::Json(_) => false,
        };
        if validation {
            2
        } else {
            1
        }
    }

    pub fn to_json(&self) -> Value {
        json!({ "error": self.kind(), "exit_code": self.exit_code(), "message": self.to_string() })
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn parse_coords(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("cannot parse coordinate {t:?} in {s:?}")))
        })
        .collect()
}

/// `"x,y;x,y;..."`, one point per `;`.
pub fn parse_qpoint(s: &str) -> CliResult<QPoint> {
    let pts = s
        .split(';')
        .map(parse_coords)
        .collect::<CliResult<Vec<_>>>()?;
    Ok(QPoint::new(pts)?)
}

/// `"lo:hi:count"` into geometric radii.
pub fn parse_radii(s: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, count] = parts.as_slice() else {
        return Err(usage(format!(
            "radii must look like lo:hi:count, got {s:?}"
        )));
    };
    let lo: f64 = lo
        .parse()
        .map_err(|_| usage(format!("bad lower radius in {s:?}")))?;
    let hi: f64 = hi
        .parse()
        .map_err(|_| usage(format!("bad upper radius in {s:?}")))?;
    let count: usize = count
        .parse()
        .map_err(|_| usage(format!("bad radius count in {s:?}")))?;
    Ok(geometric_radii(lo, hi, count)?)
}

pub fn read_points_csv(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let p = rec
            .iter()
            .map(|t| {
                t.parse::<f64>().map_err(|_| {
                    usage(format!(
                        "{}: line {}: bad number {t:?}",
                        path.display(),
                        line + 1
                    ))
                })
            })
            .collect::<CliResult<Vec<f64>>>()?;
        out.push(p);
    }
    Ok(out)
}

pub fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    ensure_parent(path)?;
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    ensure_parent(path)?;
    fs::write(path, text)?;
    Ok(())
}

/// Writes `manifest.json` next to the first output, listing every output
/// with the resolved configuration.
pub fn write_manifest(config: &impl Serialize, outputs: &[PathBuf]) -> CliResult<()> {
    let Some(first) = outputs.first() else {
        return Ok(());
    };
    let dir = first
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let names: Vec<String> = outputs
        .iter()
        .map(|p| {
            p.strip_prefix(dir)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned()
        })
        .collect();
    let manifest = json!({
        "tool": "qstrat",
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "outputs": names,
    });
    write_json(&dir.join("manifest.json"), &manifest)
}

/// Appends `--key value` for every entry of the JSON object at `--config`
/// whose flag does not already appear on the command line.
pub fn merge_config(args: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = args.get(i + 1).map(PathBuf::from);
        } else if let Some(rest) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(rest));
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(usage("config must be a JSON object"));
    };
    let present = |flag: &str| {
        args.iter().any(|a| {
            let s = a.to_string_lossy();
            s == flag || s.starts_with(&format!("{flag}="))
        })
    };
    let mut out = args.clone();
    for (key, v) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        if present(&flag) {
            continue;
        }
        let text = match v {
            Value::Bool(true) => {
                out.push(flag.into());
                continue;
            }
            Value::Bool(false) | Value::Null => continue,
            Value::String(s) => s,
            Value::Number(n) => n.to_string(),
            Value::Array(items) => items
                .iter()
                .map(|i| match i {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
            Value::Object(_) => {
                return Err(usage(format!("config key {key:?} must not be an object")))
            }
        };
        out.push(flag.into());
        out.push(text.into());
    }
    Ok(out)
}

pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Minimal line plot; log axes take `log10` of the data.
pub fn svg_plot(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[Series],
    log_x: bool,
    log_y: bool,
) -> String {
    let tx = |v: f64| if log_x { v.log10() } else { v };
    let ty = |v: f64| if log_y { v.log10() } else { v };
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|&(x, y)| (tx(x), ty(y))))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let (w, h, m) = (640.0, 420.0, 60.0);
    let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&(f64, f64)) -> f64| {
        pts.iter().map(sel).fold(init, f)
    };
    let (mut x0, mut x1) = (
        fold(f64::min, f64::INFINITY, |p| p.0),
        fold(f64::max, f64::NEG_INFINITY, |p| p.0),
    );
    let (mut y0, mut y1) = (
        fold(f64::min, f64::INFINITY, |p| p.1),
        fold(f64::max, f64::NEG_INFINITY, |p| p.1),
    );
    if !(x1 > x0) {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if !(y1 > y0) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let px = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#,
        w / 2.0
    );
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    let lx = if log_x {
        format!("log10 {xlabel}")
    } else {
        xlabel.to_string()
    };
    let ly = if log_y {
        format!("log10 {ylabel}")
    } else {
        ylabel.to_string()
    };
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{lx}</text>"#,
        w / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{ly}</text>"#,
        h / 2.0,
        h / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{m}" y="{}" text-anchor="middle">{x0:.3}</text>"#,
        h - m + 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{x1:.3}</text>"#,
        w - m,
        h - m + 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end">{y0:.3}</text>"#,
        m - 5.0,
        h - m
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end">{y1:.3}</text>"#,
        m - 5.0,
        m + 4.0
    );
    for (i, ser) in series.iter().enumerate() {
        let color = colors[i % colors.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| (tx(x), ty(y)))
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            path.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            w - m - 120.0,
            m + 16.0 * (i as f64 + 1.0),
            ser.label
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_points_and_radii() {
        let p = parse_qpoint("0,0;2,0").unwrap();
        assert_eq!((p.q(), p.m()), (2, 2));
        assert!(parse_qpoint("0,0;2").is_err());
        let r = parse_radii("0.1:0.4:3").unwrap();
        assert_eq!(r.len(), 3);
        assert!((r[1] - 0.2).abs() < 1e-12);
        assert!(matches!(parse_radii("0.1:0.4"), Err(CliError::Usage(_))));
    }

    #[test]
    fn config_fills_missing_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"digits": 3, "a": "0,0;2,0", "flag": true}"#).unwrap();
        let args: Vec<OsString> = [
            "qstrat",
            "--config",
            cfg.to_str().unwrap(),
            "metric",
            "--a",
            "1,1;1,1",
        ]
        .iter()
        .map(OsString::from)
        .collect();
        let merged = merge_config(args).unwrap();
        let text: Vec<String> = merged
            .iter()
            .map(|a| a.to_string_lossy().into_owned())
            .collect();
        assert!(text.windows(2).any(|w| w[0] == "--digits" && w[1] == "3"));
        assert_eq!(text.iter().filter(|t| *t == "--a").count(), 1);
        assert!(text.contains(&"--flag".to_string()));
    }

    #[test]
    fn svg_is_well_formed() {
        let s = svg_plot(
            "t",
            "r",
            "v",
            &[Series {
                label: "a",
                points: vec![(1.0, 1.0), (10.0, 100.0)],
            }],
            true,
            true,
        );
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        assert!(s.contains("polyline"));
    }
}
