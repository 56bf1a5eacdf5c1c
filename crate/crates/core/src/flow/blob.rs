//! Binary flow format.
//!
//! ```text
//! "NVP1"
//! u32 D, u32 L
//! f64 × D shift, f64 × D scale
//! per coupling layer:
//!     u32 |I|, u32 × |I| identity indices
//!     scale net, translate net, each:
//!         u32 layer_count
//!         per layer: u32 rows, u32 cols, f64 × rows·cols weights (row-major),
//!                    f64 × rows biases, u8 activation code
//! ```
//! All integers and floats are little-endian. The length depends only on the
//! architecture, never on how many samples the flow was trained on.

use super::coupling::CouplingLayer;
use super::model::{FlowModel, Standardizer};
use crate::error::{Error, Result};
use crate::linalg::{Activation, Matrix, Mlp};

pub const MAGIC: &[u8; 4] = b"NVP1";

impl FlowModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, self.dim());
        put_u32(&mut out, self.layers().len());
        for &x in self.standardizer().shift().iter().chain(self.standardizer().scale()) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for layer in self.layers() {
            put_u32(&mut out, layer.identity_indices().len());
            for &i in layer.identity_indices() {
                put_u32(&mut out, i);
            }
            write_mlp(&mut out, layer.scale_net());
            write_mlp(&mut out, layer.translate_net());
        }
        out
    }

    /// Byte length of [`FlowModel::to_bytes`], computed from the architecture alone.
    pub fn serialized_len(&self) -> usize {
        let mlp_len = |net: &Mlp| {
            4 + net
                .weights()
                .iter()
                .map(|w| 8 + 8 * (w.rows() * w.cols() + w.rows()) + 1)
                .sum::<usize>()
        };
        12 + 16 * self.dim()
            + self
                .layers()
                .iter()
                .map(|l| 4 + 4 * l.identity_indices().len() + mlp_len(l.scale_net()) + mlp_len(l.translate_net()))
                .sum::<usize>()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<FlowModel> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Format { offset: 0, message: format!("bad magic {magic:?}") });
        }
        let dim_at = r.pos;
        let dim = r.u32()?;
        if dim < 2 {
            return Err(Error::Format { offset: dim_at, message: format!("dimension {dim} < 2") });
        }
        let n_layers_at = r.pos;
        let n_layers = r.u32()?;
        if n_layers == 0 {
            return Err(Error::Format { offset: n_layers_at, message: "zero coupling layers".into() });
        }
        let std_at = r.pos;
        let shift = r.f64s(dim)?;
        let scale = r.f64s(dim)?;
        let standardizer =
            Standardizer::new(shift, scale).map_err(|e| Error::Format { offset: std_at, message: e.to_string() })?;
        let mut layers = Vec::new();
        for _ in 0..n_layers {
            let layer_at = r.pos;
            let n_id = r.u32()?;
            r.ensure(4 * n_id)?;
            let identity = (0..n_id).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let scale_net = read_mlp(&mut r, Activation::Tanh)?;
            let translate_net = read_mlp(&mut r, Activation::Identity)?;
            let layer = CouplingLayer::from_parts(dim, identity, scale_net, translate_net)
                .map_err(|e| Error::Format { offset: layer_at, message: e.to_string() })?;
            layers.push(layer);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format { offset: r.pos, message: format!("{} trailing bytes", bytes.len() - r.pos) });
        }
        FlowModel::from_parts(layers, standardizer).map_err(|e| Error::Format { offset: 0, message: e.to_string() })
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("size fits in u32").to_le_bytes());
}

fn write_mlp(out: &mut Vec<u8>, net: &Mlp) {
    put_u32(out, net.n_layers());
    for (i, (w, b)) in net.weights().iter().zip(net.biases()).enumerate() {
        put_u32(out, w.rows());
        put_u32(out, w.cols());
        for x in w.as_slice().iter().chain(b) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.push(net.activation(i).code());
    }
}

fn read_mlp(r: &mut Reader<'_>, output: Activation) -> Result<Mlp> {
    let n = r.u32()?;
    if n == 0 {
        return Err(Error::Format { offset: r.pos - 4, message: "network with no layers".into() });
    }
    let mut weights = Vec::with_capacity(n.min(64));
    let mut biases = Vec::with_capacity(n.min(64));
    let mut last_act = Activation::Relu;
    for i in 0..n {
        let rows = r.u32()?;
        let cols = r.u32()?;
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format { offset: r.pos, message: "layer size overflows".into() })?;
        let w = r.f64s(count)?;
        let b = r.f64s(rows)?;
        let act_at = r.pos;
        let code = r.take(1)?[0];
        let act = Activation::from_code(code)
            .ok_or_else(|| Error::Format { offset: act_at, message: format!("unknown activation code {code}") })?;
        let expected_hidden = i + 1 < n;
        if expected_hidden && act != Activation::Relu {
            return Err(Error::Format { offset: act_at, message: format!("hidden layer {i} must be relu") });
        }
        if !expected_hidden {
            let ok = match output {
                Activation::Tanh => act == Activation::Tanh,
                _ => act != Activation::Relu,
            };
            if !ok {
                return Err(Error::Format { offset: act_at, message: format!("invalid output activation {act:?}") });
            }
        }
        last_act = act;
        weights.push(Matrix::from_vec(rows, cols, w)?);
        biases.push(b);
    }
    let at = r.pos;
    Mlp::from_parts(weights, biases, last_act).map_err(|e| Error::Format { offset: at, message: e.to_string() })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn ensure(&self, n: usize) -> Result<()> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos,
                message: format!("truncated: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        Ok(())
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        self.ensure(n)?;
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| Error::Format { offset: self.pos, message: "length overflows".into() })?;
        let raw = self.take(len)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowArch;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flow(dim: usize, hidden: Vec<usize>, seed: u64) -> FlowModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = Standardizer::new(vec![0.5; dim], vec![1.5; dim]).unwrap();
        FlowModel::new(dim, &FlowArch::new(3, hidden), std, &mut rng).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let f = flow(3, vec![8, 8], 1);
        let bytes = f.to_bytes();
        assert_eq!(bytes.len(), f.serialized_len());
        let g = FlowModel::from_bytes(&bytes).unwrap();
        assert_eq!(f, g);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-4.0..4.0)).collect();
            assert_eq!(f.log_prob(&x).to_bits(), g.log_prob(&x).to_bits());
        }
    }

    #[test]
    fn header_layout() {
        let bytes = flow(2, vec![4], 0).to_bytes();
        assert_eq!(&bytes[0..4], b"NVP1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(bytes[12..20].try_into().unwrap()), 0.5);
        assert_eq!(f64::from_le_bytes(bytes[28..36].try_into().unwrap()), 1.5);
    }

    #[test]
    fn length_grows_only_through_edge_layers() {
        let h = 16;
        let len = |d: usize| flow(d, vec![h, h], 0).to_bytes().len();
        // Each net: first layer h·(|I|) weights, last layer |Ī|·h weights + |Ī| biases.
        // Per coupling, |I| + |Ī| = D for both nets combined over s and t:
        // Δ = 16·ΔD (standardizer) + Σ_l [4·Δ|I_l| + 2·8·(h·ΔD + Δ|Ī_l|)].
        let (l2, l4) = (len(2), len(4));
        // D=2 masks: |I| = 1,1,1 ; D=4 masks: |I| = 2,2,2, |Ī| = 2,2,2.
        let expected = 16 * 2 + 3 * (4 * 1 + 2 * 8 * (h * 2 + 1));
        assert_eq!(l4 - l2, expected);
    }

    #[test]
    fn malformed_blobs_name_the_offset() {
        let bytes = flow(2, vec![4], 0).to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(FlowModel::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        match FlowModel::from_bytes(&bytes[..bytes.len() - 3]) {
            Err(Error::Format { offset, message }) => {
                assert!(offset <= bytes.len() - 3);
                assert!(message.contains("truncated"));
            }
            other => panic!("expected format error, got {other:?}"),
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(FlowModel::from_bytes(&extra), Err(Error::Format { offset, .. }) if offset == bytes.len()));
        // Wrong activation code on the scale net output.
        let f = flow(2, vec![4], 0);
        let scale_end = 12 + 32 + 4 + 4 + (4 + (8 + 8 * 8 + 1) + (8 + 8 * 5 + 1));
        let mut wrong = f.to_bytes();
        assert_eq!(wrong[scale_end - 1], Activation::Tanh.code());
        wrong[scale_end - 1] = Activation::Identity.code();
        assert!(matches!(FlowModel::from_bytes(&wrong), Err(Error::Format { offset, .. }) if offset == scale_end - 1));
        assert!(matches!(FlowModel::from_bytes(b"NV"), Err(Error::Format { offset: 0, .. })));
    }
}
