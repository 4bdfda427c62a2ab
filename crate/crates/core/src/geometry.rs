//! Protected geometry path: coordinate codec -> LDPC -> BPSK -> AWGN ->
//! demodulation -> LDPC decode -> coordinate decode. Coordinates are
//! recovered bit-exactly whenever every block converges and the stream
//! parses; failures are reported through flags, never as panics.

use std::io::{Read, Write};
use std::process::{Command, Stdio};

use crate::channel::{awgn, bpsk_demodulate_llr, bpsk_modulate, hard_decision, ChannelConfig};
use crate::error::{Error, Result};
use crate::ldpc::{ldpc_decode, ldpc_encode, LdpcCode};
use crate::octree::{octree_decode, octree_encode, Bitstream};
use crate::rng::derive_seed;
use crate::sparse::{Coord, Grid};

/// Byte-level geometry codec behind the transmit pipeline. The built-in
/// octree codec is the default; an external binary can stand in for it.
pub trait GeometryCodec {
    fn encode(&self, coords: &[Coord], grid: Grid) -> Result<Vec<u8>>;
    fn decode(&self, bytes: &[u8]) -> Result<(Vec<Coord>, Grid)>;
}

/// Built-in lossless octree codec.
pub struct OctreeCodec;

impl GeometryCodec for OctreeCodec {
    fn encode(&self, coords: &[Coord], grid: Grid) -> Result<Vec<u8>> {
        Ok(octree_encode(coords, grid)?.bytes().to_vec())
    }

    fn decode(&self, bytes: &[u8]) -> Result<(Vec<Coord>, Grid)> {
        octree_decode(&Bitstream::from_bytes(bytes.to_vec()))
    }
}

/// External codec subprocess.
///
/// Encode: `<command> encode` receives `gu gv gw` on the first stdin line and
/// one `u v w` line per voxel, and must write the compressed bytes to stdout.
/// Decode: `<command> decode` receives those bytes on stdin and must print
/// the grid line followed by the coordinate lines.
pub struct ExternalCodec {
    pub command: String,
}

impl ExternalCodec {
    fn run(&self, mode: &str, input: &[u8]) -> Result<Vec<u8>> {
        let mut child = Command::new(&self.command)
            .arg(mode)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Config(format!("external codec '{}': {e}", self.command)))?;
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(input)?;
        let mut out = Vec::new();
        child
            .stdout
            .take()
            .expect("piped stdout")
            .read_to_end(&mut out)?;
        let status = child.wait()?;
        if !status.success() {
            return Err(Error::Decode(format!(
                "external codec exited with {status}"
            )));
        }
        Ok(out)
    }
}

impl GeometryCodec for ExternalCodec {
    fn encode(&self, coords: &[Coord], grid: Grid) -> Result<Vec<u8>> {
        let mut text = format!("{} {} {}\n", grid[0], grid[1], grid[2]);
        for c in coords {
            text.push_str(&format!("{} {} {}\n", c[0], c[1], c[2]));
        }
        self.run("encode", text.as_bytes())
    }

    fn decode(&self, bytes: &[u8]) -> Result<(Vec<Coord>, Grid)> {
        let out = self.run("decode", bytes)?;
        let text = String::from_utf8(out)
            .map_err(|_| Error::Decode("external codec output is not UTF-8".into()))?;
        let mut lines = text.lines();
        let grid_line = lines
            .next()
            .ok_or_else(|| Error::Decode("external codec produced no grid line".into()))?;
        let g: Vec<u32> = grid_line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Decode("bad grid token".into())))
            .collect::<Result<_>>()?;
        if g.len() != 3 {
            return Err(Error::Decode("grid line needs 3 fields".into()));
        }
        let mut coords = Vec::new();
        for line in lines {
            let c: Vec<u32> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::Decode("bad coord token".into())))
                .collect::<Result<_>>()?;
            if c.len() != 3 {
                return Err(Error::Decode("coord line needs 3 fields".into()));
            }
            coords.push([c[0], c[1], c[2]]);
        }
        coords.sort();
        Ok((coords, [g[0], g[1], g[2]]))
    }
}

/// Whether the geometry bitstream is LDPC-protected or sent raw.
pub enum Protection<'a> {
    Ldpc(&'a LdpcCode),
    Uncoded,
}

/// Outcome and channel statistics of one geometry frame.
#[derive(Debug, Clone)]
pub struct GeometryTransmitResult {
    /// Decoded coordinates; empty when the frame failed.
    pub coords: Vec<Coord>,
    /// All blocks converged and the coordinate stream parsed.
    pub frame_ok: bool,
    /// Decoded coordinates match the transmitted set exactly.
    pub coords_exact: bool,
    /// Hard-decision bit errors on the transmitted (channel) bits.
    pub pre_decode_bit_errors: usize,
    pub pre_decode_bits: usize,
    /// Residual info-bit errors after decoding.
    pub post_decode_bit_errors: usize,
    pub post_decode_bits: usize,
    pub blocks: usize,
    pub converged_blocks: usize,
    pub mean_iterations: f64,
}

/// Runs the full protected path over one coordinate set.
pub fn geometry_transmit(
    codec: &dyn GeometryCodec,
    coords: &[Coord],
    grid: Grid,
    protection: &Protection,
    cfg: &ChannelConfig,
    max_iters: usize,
) -> Result<GeometryTransmitResult> {
    let payload = codec.encode(coords, grid)?;
    let bits = Bitstream::from_bytes(payload).bits();

    let mut sorted_input: Vec<Coord> = coords.to_vec();
    sorted_input.sort();

    let (received_bits, stats) = match protection {
        Protection::Ldpc(code) => transmit_coded(&bits, code, cfg, max_iters),
        Protection::Uncoded => transmit_uncoded(&bits, cfg),
    };

    let mut result = GeometryTransmitResult {
        coords: Vec::new(),
        frame_ok: false,
        coords_exact: false,
        pre_decode_bit_errors: stats.pre_errors,
        pre_decode_bits: stats.pre_bits,
        post_decode_bit_errors: stats.post_errors,
        post_decode_bits: stats.post_bits,
        blocks: stats.blocks,
        converged_blocks: stats.converged_blocks,
        mean_iterations: stats.mean_iterations,
    };

    if stats.converged_blocks != stats.blocks {
        return Ok(result);
    }
    let stream: Vec<u8> = pack_bits(&received_bits);
    match codec.decode(&stream) {
        Ok((decoded, decoded_grid)) if decoded_grid == grid => {
            result.coords_exact = decoded == sorted_input;
            result.coords = decoded;
            result.frame_ok = true;
        }
        _ => {}
    }
    Ok(result)
}

struct BlockStats {
    pre_errors: usize,
    pre_bits: usize,
    post_errors: usize,
    post_bits: usize,
    blocks: usize,
    converged_blocks: usize,
    mean_iterations: f64,
}

fn transmit_coded(
    bits: &[u8],
    code: &LdpcCode,
    cfg: &ChannelConfig,
    max_iters: usize,
) -> (Vec<u8>, BlockStats) {
    let k = code.k;
    let block_count = bits.len().div_ceil(k).max(1);
    let mut received = Vec::with_capacity(block_count * k);
    let mut stats = BlockStats {
        pre_errors: 0,
        pre_bits: 0,
        post_errors: 0,
        post_bits: 0,
        blocks: block_count,
        converged_blocks: 0,
        mean_iterations: 0.0,
    };
    for b in 0..block_count {
        let mut message = vec![0u8; k];
        for (i, slot) in message.iter_mut().enumerate() {
            *slot = bits.get(b * k + i).copied().unwrap_or(0);
        }
        let codeword = ldpc_encode(code, &message).expect("message length is k");
        let symbols = bpsk_modulate(&codeword);
        let block_cfg = ChannelConfig::new(cfg.snr_db, derive_seed(cfg.seed, b as u64));
        let noisy = awgn(&symbols, &block_cfg);
        stats.pre_bits += codeword.len();
        stats.pre_errors += hard_decision(&noisy)
            .iter()
            .zip(&codeword)
            .filter(|(a, b)| a != b)
            .count();
        let llr = bpsk_demodulate_llr(&noisy, cfg.snr_db);
        let out = ldpc_decode(code, &llr, max_iters).expect("llr length is n");
        stats.post_bits += k;
        stats.post_errors += out
            .message
            .iter()
            .zip(&message)
            .filter(|(a, b)| a != b)
            .count();
        stats.converged_blocks += usize::from(out.converged);
        stats.mean_iterations += out.iterations as f64;
        received.extend_from_slice(&out.message);
    }
    stats.mean_iterations /= block_count as f64;
    received.truncate(bits.len());
    (received, stats)
}

fn transmit_uncoded(bits: &[u8], cfg: &ChannelConfig) -> (Vec<u8>, BlockStats) {
    let symbols = bpsk_modulate(bits);
    let noisy = awgn(&symbols, &ChannelConfig::new(cfg.snr_db, derive_seed(cfg.seed, 0)));
    let decided = hard_decision(&noisy);
    let errors = decided.iter().zip(bits).filter(|(a, b)| a != b).count();
    let stats = BlockStats {
        pre_errors: errors,
        pre_bits: bits.len(),
        post_errors: errors,
        post_bits: bits.len(),
        blocks: 1,
        converged_blocks: 1,
        mean_iterations: 0.0,
    };
    (decided, stats)
}

fn pack_bits(bits: &[u8]) -> Vec<u8> {
    Bitstream::from_bits(bits).bytes().to_vec()
}

const FRAME_MAGIC: &[u8; 4] = b"FPCG";

/// On-disk replay frame: header plus per-block channel symbols.
///
/// Layout (little-endian): magic "FPCG" | grid u16 x3 | depth u8 |
/// voxel count u32 | pad bits u16 | block count u16 | blocks of
/// symbol f32 each.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryFrame {
    pub grid: Grid,
    pub depth: u8,
    pub voxel_count: u32,
    pub pad_bits: u16,
    pub blocks: Vec<Vec<f32>>,
}

/// Builds a clean (pre-channel) replay frame for a coordinate set.
pub fn frame_encode(coords: &[Coord], grid: Grid, code: &LdpcCode) -> Result<GeometryFrame> {
    let payload = octree_encode(coords, grid)?;
    let bits = payload.bits();
    let k = code.k;
    let block_count = bits.len().div_ceil(k).max(1);
    let pad_bits = block_count * k - bits.len();
    if block_count > u16::MAX as usize || pad_bits > u16::MAX as usize {
        return Err(Error::Config("frame too large for header fields".into()));
    }
    let mut blocks = Vec::with_capacity(block_count);
    for b in 0..block_count {
        let mut message = vec![0u8; k];
        for (i, slot) in message.iter_mut().enumerate() {
            *slot = bits.get(b * k + i).copied().unwrap_or(0);
        }
        let codeword = ldpc_encode(code, &message)?;
        blocks.push(bpsk_modulate(&codeword).iter().map(|&s| s as f32).collect());
    }
    let depth_byte = payload.bytes()[10];
    Ok(GeometryFrame {
        grid,
        depth: depth_byte,
        voxel_count: coords.len() as u32,
        pad_bits: pad_bits as u16,
        blocks,
    })
}

/// Decodes a replay frame back to coordinates.
pub fn frame_decode(
    frame: &GeometryFrame,
    code: &LdpcCode,
    snr_db: f64,
    max_iters: usize,
) -> Result<(Vec<Coord>, Grid)> {
    let mut bits = Vec::with_capacity(frame.blocks.len() * code.k);
    for block in &frame.blocks {
        if block.len() != code.n {
            return Err(Error::Decode("frame block length != codeword length".into()));
        }
        let symbols: Vec<f64> = block.iter().map(|&s| s as f64).collect();
        let llr = bpsk_demodulate_llr(&symbols, snr_db);
        let out = ldpc_decode(code, &llr, max_iters)?;
        if !out.converged {
            return Err(Error::Decode("frame block failed to converge".into()));
        }
        bits.extend_from_slice(&out.message);
    }
    let payload_bits = bits.len() - frame.pad_bits as usize;
    bits.truncate(payload_bits);
    octree_decode(&Bitstream::from_bits(&bits))
}

pub fn frame_write<W: Write>(frame: &GeometryFrame, mut w: W) -> Result<()> {
    w.write_all(FRAME_MAGIC)?;
    for g in frame.grid {
        w.write_all(&(g as u16).to_le_bytes())?;
    }
    w.write_all(&[frame.depth])?;
    w.write_all(&frame.voxel_count.to_le_bytes())?;
    w.write_all(&frame.pad_bits.to_le_bytes())?;
    w.write_all(&(frame.blocks.len() as u16).to_le_bytes())?;
    for block in &frame.blocks {
        for &s in block {
            w.write_all(&s.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn frame_read<R: Read>(mut r: R) -> Result<GeometryFrame> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FRAME_MAGIC {
        return Err(Error::Decode("bad frame magic".into()));
    }
    let mut grid = [0u32; 3];
    for g in grid.iter_mut() {
        let mut buf = [0u8; 2];
        r.read_exact(&mut buf)?;
        *g = u16::from_le_bytes(buf) as u32;
    }
    let mut depth = [0u8; 1];
    r.read_exact(&mut depth)?;
    let mut count = [0u8; 4];
    r.read_exact(&mut count)?;
    let mut pad = [0u8; 2];
    r.read_exact(&mut pad)?;
    let mut blocks_len = [0u8; 2];
    r.read_exact(&mut blocks_len)?;
    let block_count = u16::from_le_bytes(blocks_len) as usize;

    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if block_count == 0 {
        if !rest.is_empty() {
            return Err(Error::Decode("trailing bytes after empty frame".into()));
        }
        return Ok(GeometryFrame {
            grid,
            depth: depth[0],
            voxel_count: u32::from_le_bytes(count),
            pad_bits: u16::from_le_bytes(pad),
            blocks: Vec::new(),
        });
    }
    if rest.len() % (4 * block_count) != 0 {
        return Err(Error::Decode("frame payload not divisible into blocks".into()));
    }
    let symbols_per_block = rest.len() / (4 * block_count);
    let mut blocks = Vec::with_capacity(block_count);
    let mut off = 0;
    for _ in 0..block_count {
        let mut block = Vec::with_capacity(symbols_per_block);
        for _ in 0..symbols_per_block {
            block.push(f32::from_le_bytes([
                rest[off],
                rest[off + 1],
                rest[off + 2],
                rest[off + 3],
            ]));
            off += 4;
        }
        blocks.push(block);
    }
    Ok(GeometryFrame {
        grid,
        depth: depth[0],
        voxel_count: u32::from_le_bytes(count),
        pad_bits: u16::from_le_bytes(pad),
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ldpc::ldpc_build;
    use crate::rng::seeded_rng;
    use rand::Rng;

    fn random_coords(n: usize, grid: Grid, seed: u64) -> Vec<Coord> {
        let mut rng = seeded_rng(seed);
        let mut set = std::collections::BTreeSet::new();
        while set.len() < n {
            set.insert([
                rng.gen_range(0..grid[0]),
                rng.gen_range(0..grid[1]),
                rng.gen_range(0..grid[2]),
            ]);
        }
        set.into_iter().collect()
    }

    #[test]
    fn noiseless_transmit_is_identity() {
        let code = ldpc_build(20, 2, 5, 1).unwrap();
        let coords = random_coords(40, [16, 16, 8], 7);
        let cfg = ChannelConfig::new(f64::INFINITY, 3);
        let out = geometry_transmit(
            &OctreeCodec,
            &coords,
            [16, 16, 8],
            &Protection::Ldpc(&code),
            &cfg,
            50,
        )
        .unwrap();
        assert!(out.frame_ok);
        assert!(out.coords_exact);
        assert_eq!(out.coords, coords);
        assert_eq!(out.pre_decode_bit_errors, 0);
    }

    #[test]
    fn high_snr_frames_all_recover() {
        let code = ldpc_build(20, 2, 5, 2).unwrap();
        for trial in 0..100 {
            let coords = random_coords(30, [16, 16, 8], 100 + trial);
            let cfg = ChannelConfig::new(20.0, 500 + trial);
            let out = geometry_transmit(
                &OctreeCodec,
                &coords,
                [16, 16, 8],
                &Protection::Ldpc(&code),
                &cfg,
                50,
            )
            .unwrap();
            assert!(out.frame_ok, "trial {trial}");
            assert!(out.coords_exact, "trial {trial}");
        }
    }

    #[test]
    fn very_low_snr_fails_gracefully() {
        let code = ldpc_build(20, 2, 5, 3).unwrap();
        let coords = random_coords(50, [16, 16, 8], 8);
        let mut ok = 0;
        for trial in 0..10 {
            let cfg = ChannelConfig::new(-10.0, 900 + trial);
            let out = geometry_transmit(
                &OctreeCodec,
                &coords,
                [16, 16, 8],
                &Protection::Ldpc(&code),
                &cfg,
                30,
            )
            .unwrap();
            ok += usize::from(out.frame_ok && out.coords_exact);
        }
        assert!(ok <= 1, "unexpectedly many clean frames at -10 dB: {ok}");
    }

    #[test]
    fn uncoded_path_noiseless_identity() {
        let coords = random_coords(25, [8, 8, 8], 9);
        let cfg = ChannelConfig::new(f64::INFINITY, 4);
        let out = geometry_transmit(
            &OctreeCodec,
            &coords,
            [8, 8, 8],
            &Protection::Uncoded,
            &cfg,
            50,
        )
        .unwrap();
        assert!(out.frame_ok && out.coords_exact);
        assert_eq!(out.coords, coords);
    }

    #[test]
    fn frame_round_trip_bytes_and_decode() {
        let code = ldpc_build(20, 2, 5, 4).unwrap();
        let coords = random_coords(20, [16, 16, 8], 10);
        let frame = frame_encode(&coords, [16, 16, 8], &code).unwrap();

        let mut buf = Vec::new();
        frame_write(&frame, &mut buf).unwrap();
        let back = frame_read(buf.as_slice()).unwrap();
        assert_eq!(frame, back);

        let (decoded, grid) = frame_decode(&back, &code, f64::INFINITY, 50).unwrap();
        assert_eq!(decoded, coords);
        assert_eq!(grid, [16, 16, 8]);
    }
}
