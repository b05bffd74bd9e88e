//! Single-file model container and its text manifest.
//!
//! Layout, all little-endian: magic "TYRT", format version u16, a graph
//! description block (one record per layer), head records, a per-tensor
//! qparams block, then one weight block per conv layer carrying the float
//! master and, when present, the derived int8 weights.

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use tyrt_core::graph::{
    Chw, ConvSpec, DetectKind, GraphSpec, HeadScale, LayerKind, LayerSpec, SizeVariant, Version,
};
use tyrt_core::quant::{ActKind, QParams};
use tyrt_core::weights::{ConvWeights, QuantConv, WeightStore};

pub const MAGIC: [u8; 4] = *b"TYRT";
pub const FORMAT_VERSION: u16 = 1;

const MAX_LAYERS: u32 = 100_000;
const MAX_NAME: u16 = 1024;

#[derive(Debug)]
pub enum FormatError {
    Io(io::Error),
    BadMagic,
    UnsupportedFormatVersion(u16),
    Corrupt(&'static str),
}

impl From<io::Error> for FormatError {
    fn from(e: io::Error) -> Self {
        FormatError::Io(e)
    }
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatError::Io(e) => write!(f, "io error: {e}"),
            FormatError::BadMagic => write!(f, "not a TYRT model file (bad magic)"),
            FormatError::UnsupportedFormatVersion(v) => {
                write!(f, "unsupported format version {v} (this build reads {FORMAT_VERSION})")
            }
            FormatError::Corrupt(what) => write!(f, "corrupt model file: {what}"),
        }
    }
}

impl std::error::Error for FormatError {}

/// A graph plus its weight store, as stored on disk.
#[derive(Debug, Clone)]
pub struct Model {
    pub graph: GraphSpec,
    pub weights: WeightStore,
}

fn put_u8(w: &mut impl Write, v: u8) -> io::Result<()> {
    w.write_all(&[v])
}

fn put_u16(w: &mut impl Write, v: u16) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f32(w: &mut impl Write, v: f32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64(w: &mut impl Write, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_i32(w: &mut impl Write, v: i32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_str(w: &mut impl Write, s: &str) -> Result<(), FormatError> {
    if s.len() > MAX_NAME as usize {
        return Err(FormatError::Corrupt("layer name too long"));
    }
    put_u16(w, s.len() as u16)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn put_qparams(w: &mut impl Write, q: QParams) -> io::Result<()> {
    put_f32(w, q.scale)?;
    w.write_all(&[q.zero_point as u8])
}

fn get_u8(r: &mut impl Read) -> io::Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn get_u16(r: &mut impl Read) -> io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn get_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f32(r: &mut impl Read) -> io::Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_i32(r: &mut impl Read) -> io::Result<i32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(i32::from_le_bytes(b))
}

fn get_str(r: &mut impl Read) -> Result<String, FormatError> {
    let len = get_u16(r)?;
    if len > MAX_NAME {
        return Err(FormatError::Corrupt("layer name too long"));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| FormatError::Corrupt("layer name not utf-8"))
}

fn get_qparams(r: &mut impl Read) -> Result<QParams, FormatError> {
    let scale = get_f32(r)?;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(FormatError::Corrupt("qparams scale not positive"));
    }
    let zp = get_u8(r)? as i8;
    Ok(QParams::new(scale, zp))
}

fn version_tag(v: Version) -> u8 {
    match v {
        Version::V1_3 => 0,
        Version::V5 => 1,
        Version::V8 => 2,
        Version::V10 => 3,
    }
}

fn version_from_tag(t: u8) -> Result<Version, FormatError> {
    Ok(match t {
        0 => Version::V1_3,
        1 => Version::V5,
        2 => Version::V8,
        3 => Version::V10,
        _ => return Err(FormatError::Corrupt("unknown network version tag")),
    })
}

fn act_tag(a: Option<ActKind>) -> u8 {
    match a {
        None => 0,
        Some(ActKind::Silu) => 1,
        Some(ActKind::LeakyRelu) => 2,
    }
}

fn act_from_tag(t: u8) -> Result<Option<ActKind>, FormatError> {
    Ok(match t {
        0 => None,
        1 => Some(ActKind::Silu),
        2 => Some(ActKind::LeakyRelu),
        _ => return Err(FormatError::Corrupt("unknown activation tag")),
    })
}

pub fn write_model(w: &mut impl Write, m: &Model) -> Result<(), FormatError> {
    let g = &m.graph;
    w.write_all(&MAGIC)?;
    put_u16(w, FORMAT_VERSION)?;

    put_u8(w, version_tag(g.version))?;
    put_u8(w, if g.size == SizeVariant::Small { 0 } else { 1 })?;
    put_u8(w, if g.detect_kind == DetectKind::V8 { 0 } else { 1 })?;
    put_f64(w, g.width_multiple)?;
    put_f64(w, g.depth_multiple)?;
    put_u32(w, g.num_classes as u32)?;
    put_u32(w, g.input_resolution as u32)?;

    put_u32(w, g.layers.len() as u32)?;
    for layer in &g.layers {
        put_str(w, &layer.name)?;
        match &layer.kind {
            LayerKind::Input => put_u8(w, 0)?,
            LayerKind::Conv(c) => {
                put_u8(w, 1)?;
                put_u32(w, c.cin as u32)?;
                put_u32(w, c.cout as u32)?;
                put_u32(w, c.k as u32)?;
                put_u32(w, c.s as u32)?;
                put_u32(w, c.p as u32)?;
                put_u8(w, act_tag(c.act))?;
            }
            LayerKind::MaxPool { k, s, p } => {
                put_u8(w, 2)?;
                put_u32(w, *k as u32)?;
                put_u32(w, *s as u32)?;
                put_u32(w, *p as u32)?;
            }
            LayerKind::Upsample { factor } => {
                put_u8(w, 3)?;
                put_u32(w, *factor as u32)?;
            }
            LayerKind::Concat => put_u8(w, 4)?,
            LayerKind::Add => put_u8(w, 5)?,
        }
        put_u8(w, layer.inputs.len() as u8)?;
        for &i in &layer.inputs {
            put_u32(w, i as u32)?;
        }
        put_u32(w, layer.out.c as u32)?;
        put_u32(w, layer.out.h as u32)?;
        put_u32(w, layer.out.w as u32)?;
    }

    put_u32(w, g.heads.len() as u32)?;
    for h in &g.heads {
        put_u32(w, h.layer as u32)?;
        put_u32(w, h.stride as u32)?;
    }

    for id in 0..g.layers.len() {
        put_qparams(w, m.weights.act_q[id])?;
        match m.weights.pre_act_q[id] {
            Some(q) => {
                put_u8(w, 1)?;
                put_qparams(w, q)?;
            }
            None => put_u8(w, 0)?,
        }
    }

    for (id, layer) in g.layers.iter().enumerate() {
        let LayerKind::Conv(c) = &layer.kind else { continue };
        let master = m.weights.master[id]
            .as_ref()
            .ok_or(FormatError::Corrupt("conv layer without master weights"))?;
        if master.w.len() != c.weight_len() || master.b.len() != c.cout {
            return Err(FormatError::Corrupt("master weight length mismatch"));
        }
        for &v in &master.w {
            put_f32(w, v)?;
        }
        for &v in &master.b {
            put_f32(w, v)?;
        }
        match &m.weights.quant[id] {
            Some(q) => {
                if q.w_q.len() != c.weight_len() || q.b_q.len() != c.cout {
                    return Err(FormatError::Corrupt("quant weight length mismatch"));
                }
                put_u8(w, 1)?;
                put_f32(w, q.w_scale)?;
                let bytes: Vec<u8> = q.w_q.iter().map(|&v| v as u8).collect();
                w.write_all(&bytes)?;
                for &v in &q.b_q {
                    put_i32(w, v)?;
                }
            }
            None => put_u8(w, 0)?,
        }
    }
    Ok(())
}

pub fn read_model(r: &mut impl Read) -> Result<Model, FormatError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let fv = get_u16(r)?;
    if fv != FORMAT_VERSION {
        return Err(FormatError::UnsupportedFormatVersion(fv));
    }

    let version = version_from_tag(get_u8(r)?)?;
    let size = match get_u8(r)? {
        0 => SizeVariant::Small,
        1 => SizeVariant::Big,
        _ => return Err(FormatError::Corrupt("unknown size tag")),
    };
    let detect_kind = match get_u8(r)? {
        0 => DetectKind::V8,
        1 => DetectKind::V10,
        _ => return Err(FormatError::Corrupt("unknown detect tag")),
    };
    let width_multiple = get_f64(r)?;
    let depth_multiple = get_f64(r)?;
    let num_classes = get_u32(r)? as usize;
    let input_resolution = get_u32(r)? as usize;

    let n_layers = get_u32(r)?;
    if n_layers == 0 || n_layers > MAX_LAYERS {
        return Err(FormatError::Corrupt("layer count out of range"));
    }
    let mut layers = Vec::with_capacity(n_layers as usize);
    for _ in 0..n_layers {
        let name = get_str(r)?;
        let kind = match get_u8(r)? {
            0 => LayerKind::Input,
            1 => {
                let cin = get_u32(r)? as usize;
                let cout = get_u32(r)? as usize;
                let k = get_u32(r)? as usize;
                let s = get_u32(r)? as usize;
                let p = get_u32(r)? as usize;
                let act = act_from_tag(get_u8(r)?)?;
                LayerKind::Conv(ConvSpec { cin, cout, k, s, p, act })
            }
            2 => {
                let k = get_u32(r)? as usize;
                let s = get_u32(r)? as usize;
                let p = get_u32(r)? as usize;
                LayerKind::MaxPool { k, s, p }
            }
            3 => LayerKind::Upsample { factor: get_u32(r)? as usize },
            4 => LayerKind::Concat,
            5 => LayerKind::Add,
            _ => return Err(FormatError::Corrupt("unknown layer kind tag")),
        };
        let n_in = get_u8(r)? as usize;
        let mut inputs = Vec::with_capacity(n_in);
        for _ in 0..n_in {
            inputs.push(get_u32(r)? as usize);
        }
        let out = Chw {
            c: get_u32(r)? as usize,
            h: get_u32(r)? as usize,
            w: get_u32(r)? as usize,
        };
        layers.push(LayerSpec { name, kind, inputs, out });
    }

    let n_heads = get_u32(r)?;
    if n_heads > n_layers {
        return Err(FormatError::Corrupt("head count out of range"));
    }
    let mut heads = Vec::with_capacity(n_heads as usize);
    for _ in 0..n_heads {
        let layer = get_u32(r)? as usize;
        let stride = get_u32(r)? as usize;
        if layer >= layers.len() {
            return Err(FormatError::Corrupt("head references missing layer"));
        }
        heads.push(HeadScale { layer, stride });
    }

    let graph = GraphSpec {
        version,
        size,
        width_multiple,
        depth_multiple,
        num_classes,
        input_resolution,
        layers,
        heads,
        detect_kind,
    };
    graph.validate().map_err(|_| FormatError::Corrupt("graph fails validation"))?;

    let n = graph.layers.len();
    let mut act_q = Vec::with_capacity(n);
    let mut pre_act_q = Vec::with_capacity(n);
    for _ in 0..n {
        act_q.push(get_qparams(r)?);
        pre_act_q.push(match get_u8(r)? {
            0 => None,
            1 => Some(get_qparams(r)?),
            _ => return Err(FormatError::Corrupt("bad pre-activation flag")),
        });
    }

    let mut master = vec![None; n];
    let mut quant = vec![None; n];
    for (id, layer) in graph.layers.iter().enumerate() {
        let LayerKind::Conv(c) = &layer.kind else { continue };
        let wlen = c.weight_len();
        let mut w = Vec::with_capacity(wlen);
        for _ in 0..wlen {
            w.push(get_f32(r)?);
        }
        let mut b = Vec::with_capacity(c.cout);
        for _ in 0..c.cout {
            b.push(get_f32(r)?);
        }
        master[id] = Some(ConvWeights { w, b });
        match get_u8(r)? {
            0 => {}
            1 => {
                let w_scale = get_f32(r)?;
                if !(w_scale.is_finite() && w_scale > 0.0) {
                    return Err(FormatError::Corrupt("weight scale not positive"));
                }
                let mut bytes = vec![0u8; wlen];
                r.read_exact(&mut bytes)?;
                let w_q = bytes.iter().map(|&v| v as i8).collect();
                let mut b_q = Vec::with_capacity(c.cout);
                for _ in 0..c.cout {
                    b_q.push(get_i32(r)?);
                }
                quant[id] = Some(QuantConv { w_q, w_scale, b_q });
            }
            _ => return Err(FormatError::Corrupt("bad quant flag")),
        }
    }

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(FormatError::Corrupt("trailing bytes after weight blocks"));
    }

    let weights = WeightStore { master, quant, act_q, pre_act_q };
    weights
        .validate_masters(&graph)
        .map_err(|_| FormatError::Corrupt("weight blocks fail validation"))?;
    Ok(Model { graph, weights })
}

pub fn save(path: &Path, m: &Model) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model, FormatError> {
    read_model(&mut BufReader::new(File::open(path)?))
}

fn layer_macs(layer: &LayerSpec) -> u64 {
    match &layer.kind {
        LayerKind::Conv(c) => (c.k * c.k * c.cin * c.cout) as u64 * (layer.out.h * layer.out.w) as u64,
        _ => 0,
    }
}

fn layer_params(layer: &LayerSpec) -> u64 {
    match &layer.kind {
        LayerKind::Conv(c) => c.params(),
        _ => 0,
    }
}

/// Human-readable mirror of the container: identity line, totals, then one
/// row per layer with shape, parameter, and MAC counts.
pub fn manifest(m: &Model) -> String {
    let g = &m.graph;
    let quantized = g
        .layers
        .iter()
        .enumerate()
        .all(|(id, l)| !matches!(l.kind, LayerKind::Conv(_)) || m.weights.quant[id].is_some());
    let mut s = String::new();
    s.push_str(&format!(
        "model: {}-{}  classes: {}  input: {res}x{res}x3  decode: {}\n",
        g.version.as_str(),
        g.size.as_str(),
        g.num_classes,
        if g.detect_kind == DetectKind::V8 { "v8" } else { "v10" },
        res = g.input_resolution,
    ));
    s.push_str(&format!(
        "multiples: width {:.2}  depth {:.2}\n",
        g.width_multiple, g.depth_multiple
    ));
    s.push_str(&format!(
        "params: {} ({:.2} M)  macs: {}  weights: {}\n",
        g.count_params(),
        g.count_params() as f64 / 1.0e6,
        g.count_macs(),
        if quantized { "int8+float master" } else { "float master only" },
    ));
    for h in &g.heads {
        s.push_str(&format!(
            "head: layer {} ({})  stride {}  out {}\n",
            h.layer, g.layers[h.layer].name, h.stride, g.layers[h.layer].out
        ));
    }
    s.push_str(&format!(
        "\n{:>4}  {:<22} {:<9} {:<10} {:<13} {:>9} {:>12}\n",
        "id", "name", "kind", "inputs", "out", "params", "macs"
    ));
    for (id, layer) in g.layers.iter().enumerate() {
        let inputs = if layer.inputs.is_empty() {
            "-".to_string()
        } else {
            layer.inputs.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
        };
        s.push_str(&format!(
            "{:>4}  {:<22} {:<9} {:<10} {:<13} {:>9} {:>12}\n",
            id,
            layer.name,
            layer.kind.name(),
            inputs,
            layer.out.to_string(),
            layer_params(layer),
            layer_macs(layer),
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use tyrt_core::build::build_graph;
    use tyrt_core::calib::calibrate;
    use tyrt_core::tensor::{FloatTensor, Shape};

    fn calibrated_model() -> Model {
        let graph = build_graph(Version::V8, SizeVariant::Small, 2, 64).unwrap();
        let mut weights = WeightStore::random_init(&graph, 11);
        let shape = Shape::new(1, 3, 64, 64);
        let img: Vec<f32> = (0..shape.numel()).map(|i| (i % 255) as f32 / 255.0).collect();
        calibrate(&graph, &mut weights, &[FloatTensor::new(shape, img)]).unwrap();
        Model { graph, weights }
    }

    #[test]
    fn round_trip_preserves_everything() {
        let m = calibrated_model();
        let mut buf = Vec::new();
        write_model(&mut buf, &m).unwrap();
        let back = read_model(&mut buf.as_slice()).unwrap();
        assert_eq!(back.graph.version, m.graph.version);
        assert_eq!(back.graph.size, m.graph.size);
        assert_eq!(back.graph.num_classes, m.graph.num_classes);
        assert_eq!(back.graph.input_resolution, m.graph.input_resolution);
        assert_eq!(back.graph.layers.len(), m.graph.layers.len());
        for (a, b) in back.graph.layers.iter().zip(m.graph.layers.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.kind, b.kind);
            assert_eq!(a.inputs, b.inputs);
            assert_eq!(a.out, b.out);
        }
        assert_eq!(back.weights.master, m.weights.master);
        assert_eq!(back.weights.quant, m.weights.quant);
        assert_eq!(back.weights.act_q, m.weights.act_q);
        assert_eq!(back.weights.pre_act_q, m.weights.pre_act_q);
    }

    #[test]
    fn same_model_serializes_byte_identically() {
        let a = calibrated_model();
        let b = calibrated_model();
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        write_model(&mut ba, &a).unwrap();
        write_model(&mut bb, &b).unwrap();
        assert_eq!(ba, bb);
    }

    #[test]
    fn bad_magic_rejected() {
        let m = calibrated_model();
        let mut buf = Vec::new();
        write_model(&mut buf, &m).unwrap();
        buf[0] = b'X';
        assert!(matches!(read_model(&mut buf.as_slice()), Err(FormatError::BadMagic)));
    }

    #[test]
    fn future_format_version_rejected() {
        let m = calibrated_model();
        let mut buf = Vec::new();
        write_model(&mut buf, &m).unwrap();
        buf[4] = 0xff;
        buf[5] = 0xff;
        assert!(matches!(
            read_model(&mut buf.as_slice()),
            Err(FormatError::UnsupportedFormatVersion(0xffff))
        ));
    }

    #[test]
    fn truncation_rejected() {
        let m = calibrated_model();
        let mut buf = Vec::new();
        write_model(&mut buf, &m).unwrap();
        buf.truncate(buf.len() - 7);
        assert!(read_model(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn trailing_garbage_rejected() {
        let m = calibrated_model();
        let mut buf = Vec::new();
        write_model(&mut buf, &m).unwrap();
        buf.push(0);
        assert!(matches!(read_model(&mut buf.as_slice()), Err(FormatError::Corrupt(_))));
    }

    #[test]
    fn manifest_reports_totals_and_every_layer() {
        let m = calibrated_model();
        let text = manifest(&m);
        assert!(text.contains("model: v8-small"));
        assert!(text.contains(&format!("params: {}", m.graph.count_params())));
        for layer in &m.graph.layers {
            assert!(text.contains(layer.name.as_str()), "missing {}", layer.name);
        }
        assert_eq!(text.lines().count(), m.graph.layers.len() + 3 + m.graph.heads.len() + 2);
    }
}
