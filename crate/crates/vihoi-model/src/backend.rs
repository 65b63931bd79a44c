//! Out-of-process prior extraction: a small length-prefixed binary protocol
//! over TCP so the encoder can live in another process. The client side
//! implements [`PriorSource`]; the server side wraps any other source.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::time::Duration;

use ndarray::Array2;

use vihoi_core::render::ImageBuf;

use crate::encoder::{LayeredEmbeddings, PriorSource, IMAGE_COUNT};
use crate::prompts::PromptBundle;
use crate::tokenizer::Vocab;
use crate::{Error, Result};

pub const ENCODER_ENDPOINT_ENV: &str = "VIHOI_ENCODER_ENDPOINT";

const REQ_MAGIC: &[u8; 4] = b"VHRQ";
const RSP_MAGIC: &[u8; 4] = b"VHRS";
const VERSION: u32 = 1;
const KIND_INFO: u8 = 0;
const KIND_ENCODE: u8 = 1;
const KIND_ERROR: u8 = 0xff;
const IO_TIMEOUT: Duration = Duration::from_secs(30);

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(buf: &mut Vec<u8>, b: &[u8]) {
    put_u32(buf, b.len() as u32);
    buf.extend_from_slice(b);
}

fn read_exact(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(Error::Io)?;
    Ok(buf)
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let b = read_exact(r, 4)?;
    Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
}

fn get_bytes(r: &mut impl Read) -> Result<Vec<u8>> {
    let n = get_u32(r)? as usize;
    if n > 256 << 20 {
        return Err(Error::Msg(format!("oversized frame field of {n} bytes")));
    }
    read_exact(r, n)
}

fn get_string(r: &mut impl Read) -> Result<String> {
    String::from_utf8(get_bytes(r)?).map_err(|e| Error::Msg(format!("frame text: {e}")))
}

fn f32s_to_bytes(v: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(v.len() * 4);
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn bytes_to_f32s(b: &[u8]) -> Result<Vec<f32>> {
    if b.len() % 4 != 0 {
        return Err(Error::Msg("float payload not a multiple of 4 bytes".into()));
    }
    Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
}

fn expect_magic(r: &mut impl Read, want: &[u8; 4]) -> Result<()> {
    let got = read_exact(r, 4)?;
    if got != want {
        return Err(Error::Msg(format!("bad frame magic {got:?}")));
    }
    let ver = get_u32(r)?;
    if ver != VERSION {
        return Err(Error::Msg(format!("unsupported protocol version {ver}")));
    }
    Ok(())
}

/// Client for a remote prior-extraction service.
#[derive(Debug, Clone)]
pub struct RemoteEncoder {
    endpoint: String,
    checksum: String,
    depth: usize,
    resolution: usize,
}

impl RemoteEncoder {
    pub fn connect(endpoint: &str) -> Result<Self> {
        let mut stream = open(endpoint)?;
        let mut req = frame_header(KIND_INFO);
        stream.write_all(&req).map_err(Error::Io)?;
        req.clear();
        expect_magic(&mut stream, RSP_MAGIC)?;
        check_kind(&mut stream, KIND_INFO)?;
        let checksum = get_string(&mut stream)?;
        let depth = get_u32(&mut stream)? as usize;
        let resolution = get_u32(&mut stream)? as usize;
        Ok(Self { endpoint: endpoint.to_string(), checksum, depth, resolution })
    }

    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var(ENCODER_ENDPOINT_ENV).map_err(|_| {
            vihoi_core::Error::BackendUnavailable(format!("{ENCODER_ENDPOINT_ENV} is not set"))
        })?;
        Self::connect(&endpoint)
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

fn open(endpoint: &str) -> Result<TcpStream> {
    let stream = TcpStream::connect(endpoint).map_err(|e| {
        vihoi_core::Error::BackendUnavailable(format!("encoder endpoint {endpoint}: {e}"))
    })?;
    stream.set_read_timeout(Some(IO_TIMEOUT)).map_err(Error::Io)?;
    stream.set_write_timeout(Some(IO_TIMEOUT)).map_err(Error::Io)?;
    Ok(stream)
}

fn frame_header(kind: u8) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(REQ_MAGIC);
    put_u32(&mut buf, VERSION);
    buf.push(kind);
    buf
}

fn check_kind(r: &mut impl Read, want: u8) -> Result<()> {
    let kind = read_exact(r, 1)?[0];
    if kind == KIND_ERROR {
        return Err(Error::Msg(format!("encoder backend error: {}", get_string(r)?)));
    }
    if kind != want {
        return Err(Error::Msg(format!("unexpected response kind {kind}")));
    }
    Ok(())
}

impl PriorSource for RemoteEncoder {
    fn layered(
        &self,
        images: &[ImageBuf; IMAGE_COUNT],
        prompt: &PromptBundle,
        layers: &[usize],
    ) -> Result<LayeredEmbeddings> {
        let mut req = frame_header(KIND_ENCODE);
        put_bytes(&mut req, prompt.raw.as_bytes());
        put_u32(&mut req, prompt.text_span.0 as u32);
        put_u32(&mut req, prompt.text_span.1 as u32);
        put_u32(&mut req, layers.len() as u32);
        for l in layers {
            put_u32(&mut req, *l as u32);
        }
        for img in images {
            put_bytes(&mut req, &img.encode_png()?);
        }
        let mut stream = open(&self.endpoint)?;
        stream.write_all(&req).map_err(Error::Io)?;
        expect_magic(&mut stream, RSP_MAGIC)?;
        check_kind(&mut stream, KIND_ENCODE)?;
        let seq_len = get_u32(&mut stream)? as usize;
        let d_enc = get_u32(&mut stream)? as usize;
        let visual_span = (get_u32(&mut stream)? as usize, get_u32(&mut stream)? as usize);
        let text_span = (get_u32(&mut stream)? as usize, get_u32(&mut stream)? as usize);
        let n_layers = get_u32(&mut stream)? as usize;
        let mut states = std::collections::BTreeMap::new();
        for _ in 0..n_layers {
            let layer = get_u32(&mut stream)? as usize;
            let flat = bytes_to_f32s(&get_bytes(&mut stream)?)?;
            if flat.len() != seq_len * d_enc {
                return Err(Error::Msg(format!(
                    "layer {layer} payload has {} floats, want {}",
                    flat.len(),
                    seq_len * d_enc
                )));
            }
            states.insert(layer, Array2::from_shape_vec((seq_len, d_enc), flat).expect("checked"));
        }
        Ok(LayeredEmbeddings { states, visual_span, text_span, d_enc })
    }

    fn checksum(&self) -> String {
        self.checksum.clone()
    }

    fn depth(&self) -> usize {
        self.depth
    }

    fn resolution(&self) -> usize {
        self.resolution
    }
}

/// Serves one request on an accepted connection, delegating to `source`.
pub fn serve_connection(stream: &mut TcpStream, source: &dyn PriorSource) -> Result<()> {
    stream.set_read_timeout(Some(IO_TIMEOUT)).map_err(Error::Io)?;
    stream.set_write_timeout(Some(IO_TIMEOUT)).map_err(Error::Io)?;
    expect_magic(stream, REQ_MAGIC)?;
    let kind = read_exact(stream, 1)?[0];
    let mut rsp = Vec::new();
    rsp.extend_from_slice(RSP_MAGIC);
    put_u32(&mut rsp, VERSION);
    match handle(stream, source, kind) {
        Ok(body) => {
            rsp.push(kind);
            rsp.extend_from_slice(&body);
        }
        Err(e) => {
            rsp.push(KIND_ERROR);
            put_bytes(&mut rsp, e.to_string().as_bytes());
        }
    }
    stream.write_all(&rsp).map_err(Error::Io)
}

fn handle(stream: &mut TcpStream, source: &dyn PriorSource, kind: u8) -> Result<Vec<u8>> {
    let mut body = Vec::new();
    match kind {
        KIND_INFO => {
            put_bytes(&mut body, source.checksum().as_bytes());
            put_u32(&mut body, source.depth() as u32);
            put_u32(&mut body, source.resolution() as u32);
        }
        KIND_ENCODE => {
            let raw = get_string(stream)?;
            let span = (get_u32(stream)? as usize, get_u32(stream)? as usize);
            let n_layers = get_u32(stream)? as usize;
            let mut layers = Vec::with_capacity(n_layers);
            for _ in 0..n_layers {
                layers.push(get_u32(stream)? as usize);
            }
            let mut images = Vec::with_capacity(IMAGE_COUNT);
            for _ in 0..IMAGE_COUNT {
                images.push(ImageBuf::decode_png(&get_bytes(stream)?)?);
            }
            let images: [ImageBuf; IMAGE_COUNT] = images.try_into().expect("three images read");
            let tokens = Vocab::builtin().tokenize(&raw);
            if span.0 >= span.1 || span.1 > tokens.len() {
                return Err(Error::Msg(format!("bad text span {span:?} for {} tokens", tokens.len())));
            }
            let prompt = PromptBundle { tokens, text_span: span, raw };
            let emb = source.layered(&images, &prompt, &layers)?;
            let seq_len = emb.seq_len();
            put_u32(&mut body, seq_len as u32);
            put_u32(&mut body, emb.d_enc as u32);
            put_u32(&mut body, emb.visual_span.0 as u32);
            put_u32(&mut body, emb.visual_span.1 as u32);
            put_u32(&mut body, emb.text_span.0 as u32);
            put_u32(&mut body, emb.text_span.1 as u32);
            put_u32(&mut body, emb.states.len() as u32);
            for (layer, state) in &emb.states {
                put_u32(&mut body, *layer as u32);
                let flat: Vec<f32> = state.iter().copied().collect();
                put_bytes(&mut body, &f32s_to_bytes(&flat));
            }
        }
        other => return Err(Error::Msg(format!("unknown request kind {other}"))),
    }
    Ok(body)
}

/// Binds an ephemeral port and serves `n_requests` connections on a thread.
/// Returns the endpoint string and the join handle.
pub fn spawn_ephemeral_server(
    source: Arc<dyn PriorSource + Send + Sync>,
    n_requests: usize,
) -> Result<(String, std::thread::JoinHandle<()>)> {
    let listener = TcpListener::bind("127.0.0.1:0").map_err(Error::Io)?;
    let endpoint = listener.local_addr().map_err(Error::Io)?.to_string();
    let handle = std::thread::spawn(move || {
        for _ in 0..n_requests {
            match listener.accept() {
                Ok((mut stream, _)) => {
                    let _ = serve_connection(&mut stream, source.as_ref());
                }
                Err(_) => break,
            }
        }
    });
    Ok((endpoint, handle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{extract_priors, ExtractionConfig, ToyEncoderConfig, ToyMultimodalEncoder};
    use crate::prompts::build_extraction_prompt;

    fn small_encoder() -> ToyMultimodalEncoder {
        let cfg =
            ToyEncoderConfig { depth: 12, d_enc: 64, heads: 4, resolution: 64, ..Default::default() };
        let mut enc = ToyMultimodalEncoder::new(cfg, 5).unwrap();
        enc.freeze();
        enc
    }

    fn png_exact_images(res: usize) -> [ImageBuf; 3] {
        let mut out = Vec::new();
        for k in 0..3usize {
            let mut img = ImageBuf::new(res, res).unwrap();
            for y in 0..res {
                for x in 0..res {
                    let v = ((x * 7 + y * 3 + k * 31) % 256) as f32 / 255.0;
                    img.set_pixel(x, y, [v, 1.0 - v, (v * 0.5 * 255.0).round() / 255.0]);
                }
            }
            // Round-trip once so local and remote paths see identical pixels.
            out.push(ImageBuf::decode_png(&img.encode_png().unwrap()).unwrap());
        }
        out.try_into().unwrap()
    }

    #[test]
    fn remote_results_match_local_bitwise() {
        let enc = Arc::new(small_encoder());
        let (endpoint, handle) = spawn_ephemeral_server(enc.clone(), 2).unwrap();
        std::env::set_var(ENCODER_ENDPOINT_ENV, &endpoint);
        let remote = RemoteEncoder::from_env().unwrap();
        std::env::remove_var(ENCODER_ENDPOINT_ENV);
        assert_eq!(remote.checksum(), enc.checksum());
        assert_eq!(remote.depth(), 12);
        assert_eq!(remote.resolution(), 64);

        let prompt = build_extraction_prompt("Push the large box.").unwrap();
        let imgs = png_exact_images(64);
        let local = enc.layered(&imgs, &prompt, &[3, 12]).unwrap();
        let over_wire = remote.layered(&imgs, &prompt, &[3, 12]).unwrap();
        assert_eq!(local.visual_span, over_wire.visual_span);
        assert_eq!(local.text_span, over_wire.text_span);
        assert_eq!(local.states[&3], over_wire.states[&3]);
        assert_eq!(local.states[&12], over_wire.states[&12]);
        let cfg = ExtractionConfig::default();
        assert_eq!(extract_priors(&local, &cfg).unwrap(), extract_priors(&over_wire, &cfg).unwrap());
        handle.join().unwrap();
    }

    #[test]
    fn server_reports_layer_errors() {
        let enc = Arc::new(small_encoder());
        let (endpoint, handle) = spawn_ephemeral_server(enc, 1).unwrap();
        let remote = RemoteEncoder { endpoint, checksum: String::new(), depth: 12, resolution: 64 };
        let prompt = build_extraction_prompt("Push the box.").unwrap();
        let err = remote.layered(&png_exact_images(64), &prompt, &[40]).unwrap_err();
        assert!(err.to_string().contains("layer"), "{err}");
        handle.join().unwrap();
    }

    #[test]
    fn dead_endpoint_is_backend_unavailable() {
        let err = RemoteEncoder::connect("127.0.0.1:1").unwrap_err();
        assert!(matches!(err, Error::Core(vihoi_core::Error::BackendUnavailable(_))), "{err}");
    }
}
