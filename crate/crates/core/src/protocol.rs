//! Client/server artifacts and their binary container.
//!
//! The server publishes a [`CompressorCheckpoint`] holding only the encoder
//! half of a trained model. A client masks its erased samples, compresses
//! them with that checkpoint and uploads an [`UnlearningRequest`]; the server
//! checks it with [`validate_request`] before any unlearning.
//!
//! Every file uses the same layout, all integers little-endian:
//!
//! ```text
//! "BLDU" | version u16 | kind u8 | header_len u32 | header (UTF-8 key=value lines)
//! then until EOF, per array:
//!   name_len u16 | name | rank u8 | dims u32 × rank | payload (f32, or u32 for labels)
//! ```
//!
//! Kinds are 1 (compressor checkpoint), 2 (unlearning request) and 3 (full
//! model, compressor and approximator together). Header keys are written in
//! sorted order and floats in shortest round-trip form, so equal values give
//! equal bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::masking::{account, account_for, mask_batch, stack_masked, DpAccount, MaskSpec, SamplingStrategy};
use crate::numerics::{fnv1a64, Mlp, ParamSet, Rng, Tensor};
use crate::vib::{encode_pass, CodeMode, GaussianCode, VibArch, VibModel, COMPRESSOR_PREFIX};

pub const MAGIC: [u8; 4] = *b"BLDU";
pub const FORMAT_VERSION: u16 = 1;

/// Name of the label array in a request; stored as `u32`.
pub const LABELS_ARRAY: &str = "y_e";
/// Name of the code array in a request.
pub const CODES_ARRAY: &str = "z_e";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileKind {
    Checkpoint = 1,
    Request = 2,
    Model = 3,
}

impl FileKind {
    fn from_byte(b: u8, offset: usize) -> Result<Self> {
        match b {
            1 => Ok(FileKind::Checkpoint),
            2 => Ok(FileKind::Request),
            3 => Ok(FileKind::Model),
            other => Err(Error::format(offset, format!("unknown file kind {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    U32(Vec<u32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    pub fn from_tensor(name: impl Into<String>, t: &Tensor) -> Self {
        NamedArray {
            name: name.into(),
            dims: t.shape().to_vec(),
            data: ArrayData::F32(t.data().iter().map(|&v| v as f32).collect()),
        }
    }

    pub fn labels(name: impl Into<String>, labels: &[usize]) -> Self {
        NamedArray {
            name: name.into(),
            dims: vec![labels.len()],
            data: ArrayData::U32(labels.iter().map(|&y| y as u32).collect()),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        match &self.data {
            ArrayData::F32(v) => Tensor::new(self.dims.clone(), v.iter().map(|&x| f64::from(x)).collect()),
            ArrayData::U32(_) => Err(Error::invalid(format!("array '{}' holds labels", self.name))),
        }
    }

    pub fn to_labels(&self) -> Result<Vec<usize>> {
        match &self.data {
            ArrayData::U32(v) => Ok(v.iter().map(|&y| y as usize).collect()),
            ArrayData::F32(_) => Err(Error::invalid(format!("array '{}' holds floats", self.name))),
        }
    }
}

/// Decoded file contents before interpretation.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub version: u16,
    pub kind: FileKind,
    pub header: BTreeMap<String, String>,
    pub arrays: Vec<NamedArray>,
}

fn encode_arrays(arrays: &[NamedArray], out: &mut Vec<u8>) -> Result<()> {
    for a in arrays {
        let name = a.name.as_bytes();
        let name_len = u16::try_from(name.len()).map_err(|_| Error::invalid(format!("array name '{}' too long", a.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        let rank = u8::try_from(a.dims.len()).map_err(|_| Error::invalid("array rank above 255"))?;
        out.push(rank);
        for &d in &a.dims {
            let d = u32::try_from(d).map_err(|_| Error::invalid("array dimension above u32"))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        let expected: usize = a.dims.iter().product();
        match &a.data {
            ArrayData::F32(v) => {
                check_len(&a.name, expected, v.len())?;
                v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
            }
            ArrayData::U32(v) => {
                check_len(&a.name, expected, v.len())?;
                v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
            }
        }
    }
    Ok(())
}

fn check_len(name: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::shape(format!("array '{name}' has {found} values for {expected} cells")));
    }
    Ok(())
}

impl Container {
    pub fn new(kind: FileKind) -> Self {
        Container {
            version: FORMAT_VERSION,
            kind,
            header: BTreeMap::new(),
            arrays: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl fmt::Display) {
        self.header.insert(key.to_string(), value.to_string());
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = String::new();
        for (k, v) in &self.header {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::invalid(format!("header entry '{k}' cannot be encoded")));
            }
            header.push_str(&format!("{k}={v}\n"));
        }
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        encode_arrays(&self.arrays, &mut out)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::format(0, format!("bad magic {magic:02x?}")));
        }
        let at = r.pos;
        let version = r.u16("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::format(at, format!("unsupported version {version}")));
        }
        let at = r.pos;
        let kind = FileKind::from_byte(r.u8("kind")?, at)?;
        let len = r.u32("header length")? as usize;
        let at = r.pos;
        let text = std::str::from_utf8(r.take(len, "header")?)
            .map_err(|e| Error::format(at + e.valid_up_to(), "header is not UTF-8"))?;
        let mut header = BTreeMap::new();
        let mut line_at = at;
        for line in text.split_terminator('\n') {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(line_at, format!("header line '{line}' has no '='")))?;
            if header.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::format(line_at, format!("duplicate header key '{k}'")));
            }
            line_at += line.len() + 1;
        }
        if !text.is_empty() && !text.ends_with('\n') {
            return Err(Error::format(at + len, "header does not end with a newline"));
        }
        let mut arrays = Vec::new();
        while r.pos < bytes.len() {
            arrays.push(r.array()?);
        }
        Ok(Container {
            version,
            kind,
            header,
            arrays,
        })
    }

    fn expect_kind(&self, kind: FileKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::format(6, format!("expected a {kind:?} file, found {:?}", self.kind)));
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Result<&str> {
        self.header
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::format(11, format!("missing header key '{key}'")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::format(11, format!("header key '{key}' has malformed value '{raw}'")))
    }

    fn widths(&self, key: &str) -> Result<Vec<usize>> {
        let raw = self.get(key)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|w| w.parse().map_err(|_| Error::format(11, format!("header key '{key}' has malformed value '{raw}'"))))
            .collect()
    }

    /// `end` is the file length, reported as the offset of a missing array.
    fn array(&self, name: &str, end: usize) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::format(end, format!("missing array '{name}'")))
    }

    fn params(&self) -> Result<ParamSet> {
        let mut params = ParamSet::new();
        for a in &self.arrays {
            if params.insert(a.name.clone(), a.to_tensor()?).is_some() {
                return Err(Error::format(0, format!("duplicate array '{}'", a.name)));
            }
        }
        Ok(params)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn array(&mut self) -> Result<NamedArray> {
        let name_len = self.u16("array name length")? as usize;
        let at = self.pos;
        let name = std::str::from_utf8(self.take(name_len, "array name")?)
            .map_err(|_| Error::format(at, "array name is not UTF-8"))?
            .to_string();
        let rank = self.u8("array rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u32("array dimension")? as usize);
        }
        let at = self.pos;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|c| c.checked_mul(4).is_some())
            .ok_or_else(|| Error::format(at, format!("array '{name}' is too large")))?;
        let payload = self.take(count * 4, "array payload")?;
        let words = payload.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]);
        let data = if name == LABELS_ARRAY {
            ArrayData::U32(words.map(u32::from_le_bytes).collect())
        } else {
            ArrayData::F32(words.map(f32::from_le_bytes).collect())
        };
        Ok(NamedArray { name, dims, data })
    }
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}

fn param_arrays(params: &ParamSet) -> Vec<NamedArray> {
    params.iter().map(|(name, t)| NamedArray::from_tensor(name.clone(), t)).collect()
}

/// FNV-1a 64 of the serialised compressor parameter arrays.
pub fn compressor_hash(params: &ParamSet) -> Result<u64> {
    let compressor = params.with_prefix(&format!("{COMPRESSOR_PREFIX}."));
    let mut bytes = Vec::new();
    encode_arrays(&param_arrays(&compressor), &mut bytes)?;
    Ok(fnv1a64(&bytes))
}

fn join_widths(widths: &[usize]) -> String {
    widths.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// The encoder half of a trained model, as published to clients.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressorCheckpoint {
    pub version: u16,
    pub n_features: usize,
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    /// Class count of the model the checkpoint was cut from.
    pub classes: usize,
    pub beta: f64,
    /// Seed of the training run, when known.
    pub seed: Option<u64>,
    /// `enc.*` parameters only.
    pub params: ParamSet,
}

impl CompressorCheckpoint {
    pub fn from_model(model: &VibModel, seed: Option<u64>) -> Self {
        // Values pass through f32 so an in-memory checkpoint hashes like its file.
        let params = model
            .compressor_params()
            .iter()
            .map(|(n, t)| (n.clone(), t.map(|v| f64::from(v as f32))))
            .collect();
        CompressorCheckpoint {
            version: FORMAT_VERSION,
            n_features: model.arch.n_features,
            encoder_hidden: model.arch.encoder_hidden.clone(),
            latent_dim: model.arch.latent_dim,
            classes: model.arch.classes,
            beta: model.beta,
            seed,
            params,
        }
    }

    pub fn mlp(&self) -> Result<Mlp> {
        let mut widths = vec![self.n_features];
        widths.extend_from_slice(&self.encoder_hidden);
        widths.push(2 * self.latent_dim);
        Mlp::new(COMPRESSOR_PREFIX, widths)
    }

    pub fn hash(&self) -> Result<u64> {
        compressor_hash(&self.params)
    }

    /// Gaussian codes for raw inputs, computed client-side.
    pub fn encode(&self, inputs: &Tensor) -> Result<GaussianCode> {
        Ok(encode_pass(&self.mlp()?, &self.params, inputs)?.code)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut c = Container::new(FileKind::Checkpoint);
        c.version = self.version;
        c.set("version", self.version);
        c.set("kind", "checkpoint");
        c.set("beta", self.beta);
        c.set("latent_dim", self.latent_dim);
        c.set("n_features", self.n_features);
        c.set("encoder_hidden", join_widths(&self.encoder_hidden));
        c.set("classes", self.classes);
        if let Some(seed) = self.seed {
            c.set("seed", seed);
        }
        c.arrays = param_arrays(&self.params);
        c.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::from_bytes(bytes)?;
        c.expect_kind(FileKind::Checkpoint)?;
        let params = c.params()?;
        if let Some(name) = params.names().find(|n| !n.starts_with(&format!("{COMPRESSOR_PREFIX}."))) {
            return Err(Error::format(0, format!("checkpoint holds non-compressor array '{name}'")));
        }
        let ckpt = CompressorCheckpoint {
            version: c.version,
            n_features: c.parse("n_features")?,
            encoder_hidden: c.widths("encoder_hidden")?,
            latent_dim: c.parse("latent_dim")?,
            classes: c.parse("classes")?,
            beta: c.parse("beta")?,
            seed: c.header.get("seed").map(|_| c.parse("seed")).transpose()?,
            params,
        };
        ckpt.mlp()?.check_params(&ckpt.params)?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Writes the compressor half of `model` to `path`.
pub fn export_compressor(model: &VibModel, seed: Option<u64>, path: impl AsRef<Path>) -> Result<CompressorCheckpoint> {
    let ckpt = CompressorCheckpoint::from_model(model, seed);
    ckpt.save(path)?;
    Ok(ckpt)
}

/// Serialises a full model (both halves).
pub fn model_to_bytes(model: &VibModel, seed: Option<u64>) -> Result<Vec<u8>> {
    let mut c = Container::new(FileKind::Model);
    c.set("version", FORMAT_VERSION);
    c.set("kind", "model");
    c.set("beta", model.beta);
    c.set("latent_dim", model.arch.latent_dim);
    c.set("n_features", model.arch.n_features);
    c.set("encoder_hidden", join_widths(&model.arch.encoder_hidden));
    c.set("decoder_hidden", join_widths(&model.arch.decoder_hidden));
    c.set("classes", model.arch.classes);
    if let Some(seed) = seed {
        c.set("seed", seed);
    }
    c.arrays = param_arrays(&model.params);
    c.to_bytes()
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<VibModel> {
    let c = Container::from_bytes(bytes)?;
    c.expect_kind(FileKind::Model)?;
    let arch = VibArch {
        n_features: c.parse("n_features")?,
        encoder_hidden: c.widths("encoder_hidden")?,
        latent_dim: c.parse("latent_dim")?,
        decoder_hidden: c.widths("decoder_hidden")?,
        classes: c.parse("classes")?,
    };
    arch.validate()?;
    let params = c.params()?;
    arch.compressor()?.check_params(&params)?;
    arch.approximator()?.check_params(&params)?;
    let mut model = VibModel::zeros(arch, c.parse("beta")?)?;
    if params.len() != model.params.len() {
        return Err(Error::format(0, "model file holds unexpected arrays"));
    }
    model.params = params;
    Ok(model)
}

pub fn save_model(model: &VibModel, seed: Option<u64>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &model_to_bytes(model, seed)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<VibModel> {
    model_from_bytes(&std::fs::read(path)?)
}

/// Compressed erased samples and their labels, with the masking account.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlearningRequest {
    pub z_e: Tensor,
    pub y_e: Vec<usize>,
    pub dp: DpAccount,
    pub sr: f64,
    pub beta_used: f64,
    pub mode: CodeMode,
    /// Hash of the checkpoint that produced `z_e`.
    pub created_with: u64,
}

impl UnlearningRequest {
    pub fn len(&self) -> usize {
        self.y_e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_e.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut c = Container::new(FileKind::Request);
        c.set("version", FORMAT_VERSION);
        c.set("kind", "request");
        c.set("beta", self.beta_used);
        c.set("latent_dim", self.z_e.cols());
        c.set("n_features", self.dp.n);
        c.set("strategy", self.dp.strategy);
        c.set("sr", self.sr);
        c.set("k", self.dp.k);
        c.set("epsilon", self.dp.epsilon);
        c.set("delta", self.dp.delta);
        c.set("mode", self.mode);
        c.set("checkpoint_hash", format!("{:016x}", self.created_with));
        c.arrays = vec![NamedArray::from_tensor(CODES_ARRAY, &self.z_e), NamedArray::labels(LABELS_ARRAY, &self.y_e)];
        c.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::from_bytes(bytes)?;
        c.expect_kind(FileKind::Request)?;
        let z_e = c.array(CODES_ARRAY, bytes.len())?.to_tensor()?;
        let y_e = c.array(LABELS_ARRAY, bytes.len())?.to_labels()?;
        if z_e.rank() != 2 {
            return Err(Error::format(0, "z_e must be a matrix"));
        }
        let hash = c.get("checkpoint_hash")?;
        let created_with = u64::from_str_radix(hash, 16)
            .map_err(|_| Error::format(11, format!("malformed checkpoint_hash '{hash}'")))?;
        let strategy: SamplingStrategy = c.parse("strategy")?;
        Ok(UnlearningRequest {
            z_e,
            y_e,
            dp: DpAccount {
                epsilon: c.parse("epsilon")?,
                delta: c.parse("delta")?,
                n: c.parse("n_features")?,
                k: c.parse("k")?,
                strategy,
            },
            sr: c.parse("sr")?,
            beta_used: c.parse("beta")?,
            mode: c.parse("mode")?,
            created_with,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Client side: mask, compress and package erased samples.
pub fn prepare_request(
    checkpoint: &CompressorCheckpoint,
    x_e: &Tensor,
    y_e: &[usize],
    spec: &MaskSpec,
    mode: CodeMode,
    rng: &mut Rng,
) -> Result<UnlearningRequest> {
    spec.validate()?;
    if x_e.rank() != 2 || x_e.cols() != spec.n || spec.n != checkpoint.n_features {
        return Err(Error::shape(format!(
            "erased inputs {:?}, mask spec n = {}, checkpoint expects {} features",
            x_e.shape(),
            spec.n,
            checkpoint.n_features
        )));
    }
    if x_e.rows() != y_e.len() || y_e.is_empty() {
        return Err(Error::shape(format!("{} erased rows with {} labels", x_e.rows(), y_e.len())));
    }
    let masked = stack_masked(&mask_batch(x_e, spec, rng)?)?;
    let z_e = checkpoint.encode(&masked)?.representation(mode, rng)?;
    Ok(UnlearningRequest {
        z_e,
        y_e: y_e.to_vec(),
        dp: account(spec)?,
        sr: spec.sr,
        beta_used: checkpoint.beta,
        mode,
        created_with: checkpoint.hash()?,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Validation {
    Accepted,
    Rejected(String),
}

impl Validation {
    pub fn is_accepted(&self) -> bool {
        *self == Validation::Accepted
    }
}

/// Server side: accept a request only if it matches the published checkpoint
/// and its privacy metadata recomputes. The header stores floats in their
/// shortest round-trip form, so the recomputed account must match bit for bit.
pub fn validate_request(request: &UnlearningRequest, checkpoint: &CompressorCheckpoint) -> Validation {
    let reject = |why: &str| Validation::Rejected(why.to_string());
    match checkpoint.hash() {
        Ok(h) if h == request.created_with => {}
        _ => return reject("checkpoint mismatch"),
    }
    if request.z_e.rank() != 2 || request.z_e.cols() != checkpoint.latent_dim {
        return reject("latent dim mismatch");
    }
    if request.z_e.rows() != request.y_e.len() || request.is_empty() {
        return reject("label count mismatch");
    }
    if !request.z_e.is_finite() {
        return reject("non-finite codes");
    }
    if request.y_e.iter().any(|&y| y >= checkpoint.classes) {
        return reject("label out of range");
    }
    let dp = &request.dp;
    let consistent = dp.n == checkpoint.n_features
        && MaskSpec::new(dp.n, request.sr, dp.strategy).is_ok_and(|s| s.k() == dp.k)
        && account_for(dp.n, dp.k, dp.strategy).is_ok_and(|a| a.epsilon == dp.epsilon && a.delta == dp.delta);
    if !consistent {
        return reject("dp metadata inconsistent");
    }
    Validation::Accepted
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vib::encode;

    fn model(seed: u64) -> VibModel {
        let arch = VibArch {
            n_features: 8,
            encoder_hidden: vec![6],
            latent_dim: 3,
            decoder_hidden: vec![5],
            classes: 4,
        };
        VibModel::new(arch, 0.01, &mut Rng::seeded(seed)).unwrap()
    }

    fn request(ckpt: &CompressorCheckpoint, sr: f64) -> UnlearningRequest {
        let mut rng = Rng::seeded(9);
        let x = rng.uniform_tensor(&[5, 8], 0.0, 1.0);
        let spec = MaskSpec::new(8, sr, SamplingStrategy::WithReplacement).unwrap();
        prepare_request(ckpt, &x, &[0, 1, 2, 3, 0], &spec, CodeMode::MeanCode, &mut rng).unwrap()
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let ckpt = CompressorCheckpoint::from_model(&model(1), Some(7));
        let bytes = ckpt.to_bytes().unwrap();
        let back = CompressorCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.hash().unwrap(), ckpt.hash().unwrap());
        assert!(back.params.names().all(|n| n.starts_with("enc.")));
    }

    #[test]
    fn model_hash_matches_checkpoint_hash() {
        let m = model(2);
        let back = model_from_bytes(&model_to_bytes(&m, None).unwrap()).unwrap();
        let ckpt = CompressorCheckpoint::from_model(&m, None);
        assert_eq!(compressor_hash(&back.params).unwrap(), ckpt.hash().unwrap());
        assert_eq!(model_to_bytes(&back, None).unwrap(), model_to_bytes(&m, None).unwrap());
    }

    #[test]
    fn format_errors_carry_offsets() {
        let bytes = CompressorCheckpoint::from_model(&model(3), None).to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(CompressorCheckpoint::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(CompressorCheckpoint::from_bytes(&bad), Err(Error::Format { offset: 4, .. })));
        let mut bad = bytes.clone();
        bad[6] = 7;
        assert!(matches!(CompressorCheckpoint::from_bytes(&bad), Err(Error::Format { offset: 6, .. })));
        let cut = bytes.len() - 3;
        match CompressorCheckpoint::from_bytes(&bytes[..cut]) {
            Err(Error::Format { offset, .. }) => assert!(offset > 11 && offset < cut),
            other => panic!("expected a format error, got {other:?}"),
        }
        let req = request(&CompressorCheckpoint::from_model(&model(3), None), 0.5).to_bytes().unwrap();
        assert!(matches!(CompressorCheckpoint::from_bytes(&req), Err(Error::Format { .. })));
    }

    #[test]
    fn full_sampling_request_encodes_raw_inputs() {
        let m = model(4);
        let ckpt = CompressorCheckpoint::from_model(&m, None);
        let mut rng = Rng::seeded(5);
        let x = rng.uniform_tensor(&[6, 8], 0.0, 1.0);
        let spec = MaskSpec::new(8, 1.0, SamplingStrategy::WithoutReplacement).unwrap();
        let req = prepare_request(&ckpt, &x, &[0; 6], &spec, CodeMode::MeanCode, &mut rng).unwrap();
        assert_eq!(req.z_e, ckpt.encode(&x).unwrap().mean);
        assert_eq!(req.z_e.rows(), 6);
        let direct = encode(&m, &x).unwrap().mean;
        assert!(req.z_e.data().iter().zip(direct.data()).all(|(a, b)| (a - b).abs() < 1e-5));
    }

    #[test]
    fn request_round_trip() {
        let ckpt = CompressorCheckpoint::from_model(&model(5), None);
        let req = request(&ckpt, 0.5);
        let bytes = req.to_bytes().unwrap();
        assert_eq!(req.to_bytes().unwrap(), bytes);
        let back = UnlearningRequest::from_bytes(&bytes).unwrap();
        assert_eq!(back.y_e, req.y_e);
        assert_eq!(back.dp, req.dp);
        let z32: Vec<f64> = req.z_e.data().iter().map(|&v| f64::from(v as f32)).collect();
        assert_eq!(back.z_e.data(), z32.as_slice());
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert!(validate_request(&back, &ckpt).is_accepted());
    }

    #[test]
    fn validation_rejections() {
        let ckpt = CompressorCheckpoint::from_model(&model(6), None);
        let req = request(&ckpt, 0.5);
        assert_eq!(validate_request(&req, &ckpt), Validation::Accepted);

        let mut t = req.clone();
        t.dp.epsilon += 0.1;
        assert_eq!(validate_request(&t, &ckpt), Validation::Rejected("dp metadata inconsistent".into()));
        let mut t = req.clone();
        t.dp.k += 1;
        assert_eq!(validate_request(&t, &ckpt), Validation::Rejected("dp metadata inconsistent".into()));

        let stale = CompressorCheckpoint::from_model(&model(7), None);
        assert_eq!(validate_request(&req, &stale), Validation::Rejected("checkpoint mismatch".into()));

        let mut t = req.clone();
        t.y_e[0] = 4;
        assert_eq!(validate_request(&t, &ckpt), Validation::Rejected("label out of range".into()));

        let mut t = req.clone();
        t.z_e = Tensor::zeros(&[5, 2]);
        assert_eq!(validate_request(&t, &ckpt), Validation::Rejected("latent dim mismatch".into()));
    }

    #[test]
    fn atomic_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bldu");
        let m = model(8);
        save_model(&m, Some(3), &path).unwrap();
        save_model(&m, Some(3), &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.arch, m.arch);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn mismatched_inputs_are_refused() {
        let ckpt = CompressorCheckpoint::from_model(&model(9), None);
        let spec = MaskSpec::new(8, 0.5, SamplingStrategy::WithReplacement).unwrap();
        let mut rng = Rng::seeded(0);
        let x = Tensor::zeros(&[2, 7]);
        assert!(prepare_request(&ckpt, &x, &[0, 1], &spec, CodeMode::MeanCode, &mut rng).is_err());
        let x = Tensor::zeros(&[2, 8]);
        assert!(prepare_request(&ckpt, &x, &[0], &spec, CodeMode::MeanCode, &mut rng).is_err());
    }
}
