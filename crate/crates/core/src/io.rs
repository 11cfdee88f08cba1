//! Frame files, stack index, graymap previews and CSV tables.
//!
//! A frame file is a short text header followed by the raw grid:
//!
//! ```text
//! TWINBEAM-FRAME 1
//! width 128
//! height 128
//! binning 8
//! regime counting
//! frame_index 17
//! seed 20140501
//! thresholded 1
//! signal 0 0 64 128
//! idler 64 0 64 128
//! dtype u8
//!
//! <width·height samples, row-major>
//! ```
//!
//! `dtype` is `u8` for binary counting frames and `f64le` otherwise.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::Regime;
use crate::detector::Frame;
use crate::error::{Error, Result};
use crate::grid::{Grid, Rect};

const MAGIC: &str = "TWINBEAM-FRAME 1";
pub const INDEX_FILE: &str = "index.txt";

pub fn frame_file_name(frame_index: u64) -> String {
    format!("frame_{frame_index:06}.tbf")
}

fn fmt_rect(r: &Rect) -> String {
    format!("{} {} {} {}", r.x, r.y, r.width, r.height)
}

/// Serialises a frame. Binary frames are stored one byte per superpixel.
pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let binary = frame.thresholded && frame.grid.data().iter().all(|&v| v == 0.0 || v == 1.0);
    let mut out = format!(
        "{MAGIC}\nwidth {}\nheight {}\nbinning {}\nregime {}\nframe_index {}\nseed {}\nthresholded {}\nsignal {}\nidler {}\ndtype {}\n\n",
        frame.width(),
        frame.height(),
        frame.binning,
        frame.regime,
        frame.frame_index,
        frame.seed,
        u8::from(frame.thresholded),
        fmt_rect(&frame.signal),
        fmt_rect(&frame.idler),
        if binary { "u8" } else { "f64le" },
    )
    .into_bytes();
    if binary {
        out.extend(frame.grid.data().iter().map(|&v| v as u8));
    } else {
        for v in frame.grid.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn parse_rect(s: &str) -> Result<Rect> {
    let v: Vec<usize> = s
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad(format!("bad rectangle '{s}'"))))
        .collect::<Result<_>>()?;
    match v[..] {
        [x, y, w, h] => Ok(Rect::new(x, y, w, h)),
        _ => Err(bad(format!("bad rectangle '{s}'"))),
    }
}

pub fn decode_frame(mut reader: impl BufRead) -> Result<Frame> {
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(bad("missing frame header"));
    }
    let mut fields = std::collections::HashMap::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(bad("truncated header"));
        }
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        let (k, v) = l.split_once(' ').ok_or_else(|| bad(format!("bad header line '{l}'")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| fields.get(k).ok_or_else(|| bad(format!("header lacks '{k}'")));
    let num = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| bad(format!("bad '{k}'"))) };
    let (w, h) = (num("width")? as usize, num("height")? as usize);
    let n = w * h;
    let data = match get("dtype")?.as_str() {
        "u8" => {
            let mut buf = vec![0u8; n];
            reader.read_exact(&mut buf)?;
            buf.into_iter().map(f64::from).collect()
        }
        "f64le" => {
            let mut buf = vec![0u8; n * 8];
            reader.read_exact(&mut buf)?;
            buf.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect()
        }
        other => return Err(bad(format!("unknown dtype '{other}'"))),
    };
    let regime: Regime = get("regime")?.parse().map_err(|_| bad("bad regime"))?;
    Ok(Frame {
        grid: Grid::from_vec(w, h, data),
        binning: num("binning")? as usize,
        regime,
        frame_index: num("frame_index")?,
        seed: num("seed")?,
        signal: parse_rect(get("signal")?)?,
        idler: parse_rect(get("idler")?)?,
        thresholded: num("thresholded")? != 0,
    })
}

pub fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    fs::write(path, encode_frame(frame))?;
    Ok(())
}

pub fn read_frame(path: &Path) -> Result<Frame> {
    decode_frame(BufReader::new(File::open(path)?))
}

/// Writes the stack index: one frame file name per line, in frame order.
pub fn write_index(dir: &Path, names: &[String]) -> Result<PathBuf> {
    let path = dir.join(INDEX_FILE);
    let mut f = BufWriter::new(File::create(&path)?);
    for n in names {
        writeln!(f, "{n}")?;
    }
    f.flush()?;
    Ok(path)
}

/// Frame file paths listed in a stack directory's index.
pub fn read_index(dir: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(dir.join(INDEX_FILE))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| dir.join(l))
        .collect())
}

/// 8-bit binary graymap, linearly scaled so the brightest superpixel is 255.
pub fn encode_pgm(frame: &Frame) -> Vec<u8> {
    let max = frame.grid.data().iter().fold(0.0f64, |m, &v| m.max(v));
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let mut out = format!("P5\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend(frame.grid.data().iter().map(|&v| (v * scale).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn write_pgm(path: &Path, frame: &Frame) -> Result<()> {
    fs::write(path, encode_pgm(frame))?;
    Ok(())
}

/// Plain CSV table. Column names carry their units, e.g. `power_W`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width mismatch");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Shortest round-trip decimal form; identical across platforms.
pub fn num(v: f64) -> String {
    format!("{v}")
}
