//! Binary image writers: PGM (P5) and a float32 grid with a text header.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

/// Writes an 8-bit binary PGM.
pub fn write_pgm8(path: &Path, width: usize, height: usize, data: &[u8]) -> io::Result<()> {
    check_len(width, height, data.len())?;
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(data)?;
    w.flush()
}

/// Writes a 16-bit binary PGM (big-endian samples).
pub fn write_pgm16(path: &Path, width: usize, height: usize, data: &[u16]) -> io::Result<()> {
    check_len(width, height, data.len())?;
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n65535\n")?;
    for v in data {
        w.write_all(&v.to_be_bytes())?;
    }
    w.flush()
}

/// Reads back an 8- or 16-bit binary PGM as `(width, height, maxval, samples)`.
pub fn read_pgm(path: &Path) -> io::Result<(usize, usize, u32, Vec<u32>)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad PGM header number"));
    let (w, h, max) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    let body = &bytes[pos.min(bytes.len())..];
    let samples: Vec<u32> = if max < 256 {
        body.iter().map(|&b| b as u32).collect()
    } else {
        body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as u32).collect()
    };
    if samples.len() != w * h {
        return Err(bad("PGM body length does not match header"));
    }
    Ok((w, h, max as u32, samples))
}

/// Writes `data` as little-endian f32 after a text header:
///
/// ```text
/// FLOATGRID
/// width <w>
/// height <h>
/// <key> <value>      (zero or more)
/// end
/// ```
pub fn write_float_grid(
    path: &Path,
    width: usize,
    height: usize,
    meta: &[(&str, String)],
    data: &[f64],
) -> io::Result<()> {
    check_len(width, height, data.len())?;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "FLOATGRID\nwidth {width}\nheight {height}")?;
    for (k, v) in meta {
        writeln!(w, "{k} {}", v.replace('\n', " "))?;
    }
    writeln!(w, "end")?;
    for &v in data {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()
}

/// Reads a grid written by [`write_float_grid`]: `(width, height, meta, values)`.
pub fn read_float_grid(path: &Path) -> io::Result<(usize, usize, Vec<(String, String)>, Vec<f32>)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let mut pos = 0;
    let mut lines = Vec::new();
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("unterminated header"))?;
        let line = String::from_utf8_lossy(&bytes[pos..pos + end]).into_owned();
        pos += end + 1;
        if line == "end" {
            break;
        }
        lines.push(line);
    }
    if lines.first().map(String::as_str) != Some("FLOATGRID") {
        return Err(bad("missing FLOATGRID magic"));
    }
    let mut width = None;
    let mut height = None;
    let mut meta = Vec::new();
    for line in &lines[1..] {
        let (k, v) = line.split_once(' ').unwrap_or((line, ""));
        match k {
            "width" => width = v.parse().ok(),
            "height" => height = v.parse().ok(),
            _ => meta.push((k.to_string(), v.to_string())),
        }
    }
    let (w, h) = width.zip(height).ok_or_else(|| bad("missing dimensions"))?;
    let values: Vec<f32> = bytes[pos..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if values.len() != w * h {
        return Err(bad("grid body length does not match header"));
    }
    Ok((w, h, meta, values))
}

fn check_len(width: usize, height: usize, len: usize) -> io::Result<()> {
    if width * height != len || width == 0 || height == 0 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("{width}x{height} image needs {} samples, got {len}", width * height),
        ));
    }
    Ok(())
}
