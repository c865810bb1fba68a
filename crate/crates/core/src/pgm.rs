//! Minimal reader/writer for 8-bit portable graymap images (P5 binary,
//! P2 ascii accepted on read).

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
}

pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

struct Tokenizer<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Tokenizer<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    /// Next whitespace-delimited token, skipping `#` comments.
    fn next_token(&mut self) -> Option<&'a [u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        if self.pos >= self.bytes.len() {
            return None;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        Some(&self.bytes[start..self.pos])
    }

    fn next_usize(&mut self, path: &str, what: &str) -> Result<usize, PgmError> {
        let tok = self.next_token().ok_or_else(|| PgmError::Format {
            path: path.into(),
            msg: format!("missing {what}"),
        })?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PgmError::Format {
                path: path.into(),
                msg: format!("invalid {what}"),
            })
    }
}

pub fn read_pgm(path: &Path) -> Result<Pgm, PgmError> {
    let display = path.display().to_string();
    let io_err = |source| PgmError::Io {
        path: display.clone(),
        source,
    };
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(io_err)?)
        .read_to_end(&mut bytes)
        .map_err(io_err)?;

    let mut tok = Tokenizer::new(&bytes);
    let magic = tok.next_token().ok_or_else(|| PgmError::Format {
        path: display.clone(),
        msg: "empty file".into(),
    })?;
    let binary = match magic {
        b"P5" => true,
        b"P2" => false,
        _ => {
            return Err(PgmError::Format {
                path: display,
                msg: "not a PGM file (expected P5 or P2 magic)".into(),
            })
        }
    };
    let width = tok.next_usize(&display, "width")?;
    let height = tok.next_usize(&display, "height")?;
    let maxval = tok.next_usize(&display, "maxval")?;
    if width == 0 || height == 0 {
        return Err(PgmError::Format {
            path: display,
            msg: format!("degenerate dimensions {width}x{height}"),
        });
    }
    if maxval == 0 || maxval > 255 {
        return Err(PgmError::Format {
            path: display,
            msg: format!("unsupported maxval {maxval} (only 8-bit grayscale)"),
        });
    }
    let n = width * height;
    let pixels = if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = tok.pos + 1;
        if bytes.len() < start + n {
            return Err(PgmError::Format {
                path: display,
                msg: "raster data truncated".into(),
            });
        }
        bytes[start..start + n].to_vec()
    } else {
        let mut px = Vec::with_capacity(n);
        for _ in 0..n {
            let v = tok.next_usize(&display, "pixel value")?;
            if v > maxval {
                return Err(PgmError::Format {
                    path: display,
                    msg: format!("pixel value {v} exceeds maxval {maxval}"),
                });
            }
            px.push(v as u8);
        }
        px
    };
    Ok(Pgm {
        width,
        height,
        pixels,
    })
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<(), PgmError> {
    assert_eq!(pixels.len(), width * height);
    let display = path.display().to_string();
    let io_err = |source| PgmError::Io {
        path: display.clone(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    write!(w, "P5\n{width} {height}\n255\n").map_err(io_err)?;
    w.write_all(pixels).map_err(io_err)?;
    w.flush().map_err(io_err)?;
    Ok(())
}
