//! Binary PGM (P5) and PPM (P6) images, 8- or 16-bit big-endian samples.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    /// 1 for PGM, 3 for PPM.
    pub channels: usize,
    pub maxval: u16,
    /// Interleaved samples, row-major.
    pub samples: Vec<u16>,
}

impl Pnm {
    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval > 255 {
            for s in &self.samples {
                out.extend_from_slice(&s.to_be_bytes());
            }
        } else {
            out.extend(self.samples.iter().map(|&s| s as u8));
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Pnm, String> {
        let mut pos = 0;
        let mut token = || -> std::result::Result<String, String> {
            loop {
                match bytes.get(pos) {
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(_) => break,
                    None => return Err("truncated header".into()),
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
                pos += 1;
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        let channels = match token()?.as_str() {
            "P5" => 1,
            "P6" => 3,
            m => return Err(format!("unsupported magic {m:?}")),
        };
        let num = |s: String| s.parse::<usize>().map_err(|_| format!("bad header field {s:?}"));
        let width = num(token()?)?;
        let height = num(token()?)?;
        let maxval = num(token()?)?;
        if maxval == 0 || maxval > 65535 {
            return Err(format!("maxval {maxval} out of range"));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let n = width * height * channels;
        let wide = maxval > 255;
        let need = if wide { 2 * n } else { n };
        let raster = bytes.get(pos..).unwrap_or_default();
        if raster.len() != need {
            return Err(format!("raster holds {} bytes, header implies {need}", raster.len()));
        }
        let samples: Vec<u16> = if wide {
            raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
        } else {
            raster.iter().map(|&b| b as u16).collect()
        };
        if let Some(s) = samples.iter().find(|&&s| s as usize > maxval) {
            return Err(format!("sample {s} exceeds maxval {maxval}"));
        }
        Ok(Pnm { width, height, channels, maxval: maxval as u16, samples })
    }

    pub fn read(path: &Path) -> Result<Pnm> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Pnm::decode(&bytes).map_err(|msg| Error::Pnm { path: path.into(), msg })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}

/// 8-bit PGM with 255 where `mask` is set.
pub fn mask_pgm(width: usize, height: usize, mask: &[bool]) -> Pnm {
    Pnm { width, height, channels: 1, maxval: 255, samples: mask.iter().map(|&m| if m { 255 } else { 0 }).collect() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_16_bit() {
        let p = Pnm { width: 2, height: 2, channels: 1, maxval: 65535, samples: vec![0, 1, 65535, 4096] };
        let bytes = p.encode();
        assert_eq!(&bytes[..15], b"P5\n2 2\n65535\n\0\0");
        assert_eq!(Pnm::decode(&bytes).unwrap(), p);
    }

    #[test]
    fn round_trip_ppm_with_comment() {
        let p = Pnm { width: 1, height: 2, channels: 3, maxval: 255, samples: vec![1, 2, 3, 4, 5, 255] };
        let mut bytes = b"P6\n# made by hand\n1 2\n255\n".to_vec();
        bytes.extend([1, 2, 3, 4, 5, 255]);
        assert_eq!(Pnm::decode(&bytes).unwrap(), p);
    }

    #[test]
    fn rejects_short_raster() {
        assert!(Pnm::decode(b"P5\n2 2\n255\n\x01\x02").is_err());
        assert!(Pnm::decode(b"P3\n1 1\n255\n1 2 3").is_err());
    }
}
