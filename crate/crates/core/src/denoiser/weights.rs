//! Binary weight files for [`SmallCnn`].
//!
//! Layout, all integers `u32` little-endian:
//!
//! ```text
//! magic   b"LDGECCNN"
//! version 1
//! layers  L
//! kernel  k
//! channels[L + 1]
//! per layer: weights (out·in·k·k f32, row-major [out][in][ky][kx]), then biases (out f32)
//! ```
//!
//! Parameters live in memory as `f64` and are narrowed to `f32` on save, so a
//! loaded file re-saves to identical bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{CnnArch, ConvLayer, SmallCnn};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LDGECCNN";
pub const VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, x: u32) {
    buf.extend_from_slice(&x.to_le_bytes());
}

pub fn to_bytes(net: &SmallCnn) -> Vec<u8> {
    let arch = net.arch();
    let mut buf = Vec::with_capacity(32 + 4 * net.parameter_count());
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_u32(&mut buf, arch.layers() as u32);
    put_u32(&mut buf, arch.kernel as u32);
    for &c in &arch.channels {
        put_u32(&mut buf, c as u32);
    }
    for layer in net.layers() {
        for &w in layer.weight.iter().chain(&layer.bias) {
            buf.extend_from_slice(&(w as f32).to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("weight file truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f64> {
        let v = f32::from_le_bytes(self.take(4)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Format("non-finite weight".into()));
        }
        Ok(f64::from(v))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<SmallCnn> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported weight file version {version}")));
    }
    let layers = r.u32()? as usize;
    let kernel = r.u32()? as usize;
    if layers == 0 || layers > 1024 || kernel > 64 {
        return Err(Error::Format(format!("implausible architecture: {layers} layers, kernel {kernel}")));
    }
    let channels = (0..=layers)
        .map(|_| r.u32().map(|c| c as usize))
        .collect::<Result<Vec<_>>>()?;
    let arch = CnnArch { channels, kernel };
    arch.validate().map_err(|e| Error::Format(e.to_string()))?;
    let mut convs = Vec::with_capacity(layers);
    for c in arch.channels.windows(2) {
        let (inputs, outputs) = (c[0], c[1]);
        let weight = (0..outputs * inputs * kernel * kernel)
            .map(|_| r.f32())
            .collect::<Result<Vec<_>>>()?;
        let bias = (0..outputs).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        convs.push(ConvLayer {
            inputs,
            outputs,
            kernel,
            weight,
            bias,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after weights".into()));
    }
    SmallCnn::from_layers(arch, convs)
}

/// Writes through a temporary sibling and renames into place.
pub fn save(net: &SmallCnn, path: &Path) -> Result<()> {
    write_atomic(path, &to_bytes(net))
}

pub fn load(path: &Path) -> Result<SmallCnn> {
    from_bytes(&fs::read(path)?)
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::input(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};

    #[test]
    fn round_trip_is_bit_exact() {
        let net = SmallCnn::init(CnnArch::default(), &mut substream(9, Stream::Init, 0)).unwrap();
        let bytes = to_bytes(&net);
        assert_eq!(bytes.len(), 8 + 12 + 4 * 5 + 4 * net.parameter_count());
        let loaded = from_bytes(&bytes).unwrap();
        assert_eq!(to_bytes(&loaded), bytes);
        assert_eq!(loaded.arch(), net.arch());
        for (a, b) in loaded.params().iter().zip(net.params()) {
            assert_eq!(*a, f64::from(b as f32));
        }

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        save(&loaded, &path).unwrap();
        assert_eq!(load(&path).unwrap(), loaded);
    }

    #[test]
    fn rejects_corruption() {
        let net = SmallCnn::zeros(CnnArch::with_hidden(3, 2)).unwrap();
        let bytes = to_bytes(&net);
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
        let mut nan = bytes.clone();
        let n = nan.len();
        nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(from_bytes(&nan).is_err());
    }
}
