//! Binary model format, little-endian throughout:
//!
//! ```text
//! "ADBN1"  u32 n_layers
//! per layer: u32 I, u32 J, f64 b[I], f64 c[J], f64 W[I*J] (row-major)
//! u32 K, f64 out_b[K], f64 out_W[J_last*K] (row-major)
//! u32 width, u32 height
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rbm::RbmLayer;

use super::AdaptiveDbn;

pub const MAGIC: &[u8; 5] = b"ADBN1";

fn put_u32(w: &mut impl Write, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).map_err(|_| std::io::Error::other("dimension exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

fn put_f64s(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_model(model: &AdaptiveDbn, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, model.layers.len())?;
    for layer in &model.layers {
        put_u32(w, layer.n_visible())?;
        put_u32(w, layer.n_hidden())?;
        put_f64s(w, layer.visible_bias())?;
        put_f64s(w, layer.hidden_bias())?;
        put_f64s(w, layer.weights().as_slice())?;
    }
    put_u32(w, model.n_classes())?;
    put_f64s(w, &model.out_bias)?;
    put_f64s(w, model.out_weights.as_slice())?;
    put_u32(w, model.input_shape.0)?;
    put_u32(w, model.input_shape.1)
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::UnexpectedEof => Error::Truncated(what),
                _ => Error::io("<model stream>", e),
            })?;
        Ok(buf)
    }

    fn u32(&mut self, what: &'static str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes::<4>(what)?) as usize)
    }

    fn f64s(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            out.push(f64::from_le_bytes(self.bytes::<8>(what)?));
        }
        Ok(out)
    }
}

fn inconsistent(e: Error) -> Error {
    match e {
        Error::Inconsistent(_) => e,
        other => Error::Inconsistent(other.to_string()),
    }
}

pub fn read_model(r: &mut impl Read) -> Result<AdaptiveDbn> {
    let mut r = Reader { inner: r };
    if &r.bytes::<5>("magic")? != MAGIC {
        return Err(Error::BadMagic { expected: "ADBN1" });
    }
    let n_layers = r.u32("layer count")?;
    if n_layers == 0 {
        return Err(Error::Inconsistent("model has no RBM layers".into()));
    }
    let mut layers = Vec::with_capacity(n_layers.min(64));
    for _ in 0..n_layers {
        let i = r.u32("layer shape")?;
        let j = r.u32("layer shape")?;
        if i == 0 || j == 0 {
            return Err(Error::Inconsistent(format!(
                "layer shape {i}x{j} has a zero dimension"
            )));
        }
        let b = r.f64s(i, "visible bias")?;
        let c = r.f64s(j, "hidden bias")?;
        let w = r.f64s(i * j, "weights")?;
        let w = Matrix::from_vec(i, j, w).map_err(inconsistent)?;
        layers.push(RbmLayer::from_parts(w, b, c).map_err(inconsistent)?);
    }
    let k = r.u32("class count")?;
    let out_b = r.f64s(k, "output bias")?;
    let j_last = layers.last().unwrap().n_hidden();
    let out_w = r.f64s(j_last * k, "output weights")?;
    let width = r.u32("input shape")?;
    let height = r.u32("input shape")?;
    let out_w = Matrix::from_vec(j_last, k, out_w).map_err(inconsistent)?;
    AdaptiveDbn::new(layers, out_w, out_b, (width, height)).map_err(inconsistent)
}

pub fn save(model: &AdaptiveDbn, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_model(model, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<AdaptiveDbn> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(&mut BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn model(seed: u64) -> AdaptiveDbn {
        let mut rng = Rng::new(seed);
        let l0 = RbmLayer::new(6, 4, &mut rng).unwrap();
        let l1 = RbmLayer::new(4, 3, &mut rng).unwrap();
        AdaptiveDbn::new(
            vec![l0, l1],
            Matrix::from_fn(3, 5, |_, _| rng.normal()),
            (0..5).map(|_| rng.normal()).collect(),
            (3, 2),
        )
        .unwrap()
    }

    fn bytes(m: &AdaptiveDbn) -> Vec<u8> {
        let mut buf = Vec::new();
        write_model(m, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model(3);
        let buf = bytes(&m);
        let back = read_model(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(bytes(&back), buf);
        let expected_len =
            5 + 4 + (8 + 8 * (6 + 4 + 24)) + (8 + 8 * (4 + 3 + 12)) + 4 + 8 * (5 + 15) + 8;
        assert_eq!(buf.len(), expected_len);
        assert_eq!(bytes(&model(3)), buf);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut buf = bytes(&model(1));
        buf[0] = b'X';
        assert!(matches!(
            read_model(&mut buf.as_slice()),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn every_truncation_is_rejected() {
        let buf = bytes(&model(1));
        for cut in 0..buf.len() {
            match read_model(&mut &buf[..cut]) {
                Err(Error::Truncated(_)) => {}
                other => panic!("cut at {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn inconsistent_shapes_are_rejected() {
        let mut buf = bytes(&model(1));
        // input width field sits 8 bytes from the end
        let at = buf.len() - 8;
        buf[at..at + 4].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            read_model(&mut buf.as_slice()),
            Err(Error::Inconsistent(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let m = model(9);
        save(&m, &path).unwrap();
        assert_eq!(load(&path).unwrap(), m);
        assert!(matches!(
            load(dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}
