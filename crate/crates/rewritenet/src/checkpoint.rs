//! Checkpoint container: a text header listing (name, dtype, shape, byte
//! offset) per tensor, followed by raw little-endian f64 arrays.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &str = "RNCKPT1";

pub fn save_tensors(path: &Path, items: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    let mut offset = 0usize;
    for (name, shape, data) in items {
        let dims = if shape.is_empty() {
            "-".to_string()
        } else {
            shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        header.push_str(&format!("tensor {name} f64 {dims} {offset}\n"));
        offset += data.len() * 8;
    }
    header.push_str("end\n");

    let mut buf = Vec::with_capacity(header.len() + offset);
    buf.extend_from_slice(header.as_bytes());
    for (_, _, data) in items {
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<Vec<(String, Vec<usize>, Vec<f64>)>> {
    let mut raw = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;

    // The header is ASCII lines terminated by "end\n".
    let mut pos = 0usize;
    let mut lines: Vec<String> = Vec::new();
    loop {
        let nl = raw[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("unterminated header".to_string()))?;
        let line = std::str::from_utf8(&raw[pos..pos + nl])
            .map_err(|_| Error::Checkpoint("non-utf8 header".to_string()))?
            .to_string();
        pos += nl + 1;
        if line == "end" {
            break;
        }
        lines.push(line);
    }
    if lines.is_empty() || lines[0] != MAGIC {
        return Err(Error::Checkpoint("bad magic".to_string()));
    }
    let data = &raw[pos..];

    let mut out = Vec::new();
    for line in &lines[1..] {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 5 || parts[0] != "tensor" || parts[2] != "f64" {
            return Err(Error::Checkpoint(format!("bad header line: {line}")));
        }
        let name = parts[1].to_string();
        let shape: Vec<usize> = if parts[3] == "-" {
            Vec::new()
        } else {
            parts[3]
                .split(',')
                .map(|d| {
                    d.parse::<usize>()
                        .map_err(|_| Error::Checkpoint(format!("bad shape in: {line}")))
                })
                .collect::<Result<_>>()?
        };
        let offset: usize = parts[4]
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad offset in: {line}")))?;
        let n: usize = shape.iter().product();
        let bytes = n * 8;
        if offset + bytes > data.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} overruns data section"
            )));
        }
        let vals: Vec<f64> = data[offset..offset + bytes]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, shape, vals));
    }
    Ok(out)
}
