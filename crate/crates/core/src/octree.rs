//! Simplified lossless octree codec for voxel coordinates.
//!
//! The coordinate set is embedded in a cube of side 2^depth with
//! depth = ceil(log2(max grid extent)) and serialized breadth-first: one
//! occupancy byte per occupied cell, bit j set when octant j (lexicographic
//! (du, dv, dw) order) holds at least one voxel. Raw occupancy bytes, no
//! entropy coding; the contract here is bit-exactness, not rate.
//!
//! Stream layout (little-endian):
//!   magic "FPCO" | gu u16 | gv u16 | gw u16 | depth u8 | voxel count u32
//!   | occupancy bytes

use crate::error::{Error, Result};
use crate::sparse::{Coord, Grid};

const MAGIC: &[u8; 4] = b"FPCO";

/// Framed bit sequence. Bits are stored MSB-first within each byte.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    bytes: Vec<u8>,
    len_bits: usize,
}

impl Bitstream {
    pub fn new() -> Self {
        Self {
            bytes: Vec::new(),
            len_bits: 0,
        }
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        let len_bits = bytes.len() * 8;
        Self { bytes, len_bits }
    }

    /// Reassembles a stream from single-bit values (0/1), MSB-first.
    pub fn from_bits(bits: &[u8]) -> Self {
        let mut bs = Bitstream::new();
        for &b in bits {
            bs.push_bit(b != 0);
        }
        bs
    }

    pub fn push_bit(&mut self, bit: bool) {
        if self.len_bits % 8 == 0 {
            self.bytes.push(0);
        }
        if bit {
            let byte = self.len_bits / 8;
            self.bytes[byte] |= 1 << (7 - self.len_bits % 8);
        }
        self.len_bits += 1;
    }

    pub fn push_byte(&mut self, byte: u8) {
        for i in 0..8 {
            self.push_bit(byte & (1 << (7 - i)) != 0);
        }
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.len_bits);
        self.bytes[i / 8] & (1 << (7 - i % 8)) != 0
    }

    pub fn len_bits(&self) -> usize {
        self.len_bits
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// All bits as 0/1 values, MSB-first.
    pub fn bits(&self) -> Vec<u8> {
        (0..self.len_bits).map(|i| u8::from(self.bit(i))).collect()
    }
}

impl Default for Bitstream {
    fn default() -> Self {
        Self::new()
    }
}

fn tree_depth(grid: Grid) -> u8 {
    let max_extent = grid.iter().copied().max().unwrap().max(1);
    let mut depth = 0u8;
    while (1u64 << depth) < max_extent as u64 {
        depth += 1;
    }
    depth
}

/// Encodes a unique, in-grid coordinate set losslessly.
pub fn octree_encode(coords: &[Coord], grid: Grid) -> Result<Bitstream> {
    if grid.contains(&0) || grid.iter().any(|&g| g > u16::MAX as u32) {
        return Err(Error::Config(format!("grid {grid:?} not encodable")));
    }
    let mut sorted: Vec<Coord> = coords.to_vec();
    sorted.sort();
    for pair in sorted.windows(2) {
        if pair[0] == pair[1] {
            return Err(Error::Invariant(format!("duplicate coord {:?}", pair[0])));
        }
    }
    for c in &sorted {
        if c[0] >= grid[0] || c[1] >= grid[1] || c[2] >= grid[2] {
            return Err(Error::Invariant(format!("coord {c:?} outside grid {grid:?}")));
        }
    }

    let depth = tree_depth(grid);
    let mut bs = Bitstream::new();
    for b in MAGIC {
        bs.push_byte(*b);
    }
    for axis in 0..3 {
        let g = grid[axis] as u16;
        bs.push_byte((g & 0xff) as u8);
        bs.push_byte((g >> 8) as u8);
    }
    bs.push_byte(depth);
    let count = sorted.len() as u32;
    for b in count.to_le_bytes() {
        bs.push_byte(b);
    }

    if sorted.is_empty() || depth == 0 {
        return Ok(bs);
    }

    // occupied[l] = set of occupied cells at level l (level `depth` = voxels)
    let mut occupied: Vec<std::collections::HashSet<Coord>> =
        vec![Default::default(); depth as usize + 1];
    occupied[depth as usize] = sorted.iter().copied().collect();
    for l in (0..depth as usize).rev() {
        occupied[l] = occupied[l + 1]
            .iter()
            .map(|c| [c[0] / 2, c[1] / 2, c[2] / 2])
            .collect();
    }

    // Emit bytes in breadth-first visit order, exactly mirroring the decoder:
    // children of a cell are appended in octant order as its byte is written.
    let mut frontier: Vec<Coord> = vec![[0, 0, 0]];
    for l in 0..depth as usize {
        let mut next = Vec::with_capacity(frontier.len() * 2);
        for cell in &frontier {
            let mut byte = 0u8;
            for (j, (du, dv, dw)) in octants().into_iter().enumerate() {
                let child = [2 * cell[0] + du, 2 * cell[1] + dv, 2 * cell[2] + dw];
                if occupied[l + 1].contains(&child) {
                    byte |= 1 << j;
                    next.push(child);
                }
            }
            bs.push_byte(byte);
        }
        frontier = next;
    }
    Ok(bs)
}

fn octants() -> [(u32, u32, u32); 8] {
    [
        (0, 0, 0),
        (0, 0, 1),
        (0, 1, 0),
        (0, 1, 1),
        (1, 0, 0),
        (1, 0, 1),
        (1, 1, 0),
        (1, 1, 1),
    ]
}

struct ByteReader<'a> {
    bs: &'a Bitstream,
    pos_bits: usize,
}

impl<'a> ByteReader<'a> {
    fn next_byte(&mut self) -> Result<u8> {
        if self.pos_bits + 8 > self.bs.len_bits() {
            return Err(Error::Decode("octree stream truncated".into()));
        }
        let mut b = 0u8;
        for i in 0..8 {
            if self.bs.bit(self.pos_bits + i) {
                b |= 1 << (7 - i);
            }
        }
        self.pos_bits += 8;
        Ok(b)
    }
}

/// Decodes a stream produced by [`octree_encode`]; corruption is reported as
/// a decode error rather than silently mis-parsed.
pub fn octree_decode(bs: &Bitstream) -> Result<(Vec<Coord>, Grid)> {
    let mut r = ByteReader { bs, pos_bits: 0 };
    for expected in MAGIC {
        if r.next_byte()? != *expected {
            return Err(Error::Decode("bad octree magic".into()));
        }
    }
    let mut grid = [0u32; 3];
    for g in grid.iter_mut() {
        let lo = r.next_byte()? as u32;
        let hi = r.next_byte()? as u32;
        *g = lo | (hi << 8);
    }
    if grid.contains(&0) {
        return Err(Error::Decode("zero grid extent".into()));
    }
    let depth = r.next_byte()?;
    if depth != tree_depth(grid) {
        return Err(Error::Decode("depth inconsistent with grid".into()));
    }
    let mut count_bytes = [0u8; 4];
    for b in count_bytes.iter_mut() {
        *b = r.next_byte()?;
    }
    let count = u32::from_le_bytes(count_bytes) as usize;

    if count == 0 {
        if r.pos_bits != bs.len_bits() {
            return Err(Error::Decode("trailing bytes after empty octree".into()));
        }
        return Ok((Vec::new(), grid));
    }

    let mut cells: Vec<Coord> = vec![[0, 0, 0]];
    for _level in 0..depth {
        let mut next = Vec::with_capacity(cells.len() * 2);
        for cell in &cells {
            let byte = r.next_byte()?;
            if byte == 0 {
                return Err(Error::Decode("empty occupancy byte for occupied cell".into()));
            }
            for (j, (du, dv, dw)) in octants().into_iter().enumerate() {
                if byte & (1 << j) != 0 {
                    next.push([2 * cell[0] + du, 2 * cell[1] + dv, 2 * cell[2] + dw]);
                }
            }
        }
        cells = next;
        if cells.len() > count {
            return Err(Error::Decode("occupancy exceeds declared voxel count".into()));
        }
    }
    if cells.len() != count {
        return Err(Error::Decode(format!(
            "decoded {} voxels, header declared {count}",
            cells.len()
        )));
    }
    if r.pos_bits != bs.len_bits() {
        return Err(Error::Decode("trailing bytes after octree payload".into()));
    }
    for c in &cells {
        if c[0] >= grid[0] || c[1] >= grid[1] || c[2] >= grid[2] {
            return Err(Error::Decode(format!("decoded coord {c:?} outside grid")));
        }
    }
    // breadth-first leaf order interleaves across parents; canonicalize
    cells.sort();
    Ok((cells, grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand::Rng;

    fn payload_bytes(bs: &Bitstream) -> Vec<u8> {
        // skip magic(4) + grid(6) + depth(1) + count(4)
        bs.bytes()[15..].to_vec()
    }

    #[test]
    fn single_voxel_depth3_three_bytes_of_one() {
        let bs = octree_encode(&[[0, 0, 0]], [8, 8, 8]).unwrap();
        assert_eq!(payload_bytes(&bs), vec![0b0000_0001; 3]);
        let (coords, grid) = octree_decode(&bs).unwrap();
        assert_eq!(coords, vec![[0, 0, 0]]);
        assert_eq!(grid, [8, 8, 8]);
    }

    #[test]
    fn full_2cube_is_single_ff_byte() {
        let coords: Vec<Coord> = (0..8)
            .map(|i| [(i >> 2) & 1, (i >> 1) & 1, i & 1])
            .collect();
        let bs = octree_encode(&coords, [2, 2, 2]).unwrap();
        assert_eq!(payload_bytes(&bs), vec![0xFF]);
        let (decoded, _) = octree_decode(&bs).unwrap();
        assert_eq!(decoded.len(), 8);
    }

    #[test]
    fn ff_byte_at_depth1_gives_8_coords() {
        let coords: Vec<Coord> = (0..8)
            .map(|i| [(i >> 2) & 1, (i >> 1) & 1, i & 1])
            .collect();
        let bs = octree_encode(&coords, [2, 2, 2]).unwrap();
        let (decoded, _) = octree_decode(&bs).unwrap();
        let mut sorted = coords.clone();
        sorted.sort();
        assert_eq!(decoded, sorted);
    }

    #[test]
    fn round_trip_random_scenes() {
        let mut rng = seeded_rng(101);
        for trial in 0..1000 {
            let grid = [
                rng.gen_range(1..40u32),
                rng.gen_range(1..40u32),
                rng.gen_range(1..12u32),
            ];
            let n_max = (grid[0] * grid[1] * grid[2]).min(60);
            let n = rng.gen_range(0..=n_max);
            let mut set = std::collections::BTreeSet::new();
            while (set.len() as u32) < n {
                set.insert([
                    rng.gen_range(0..grid[0]),
                    rng.gen_range(0..grid[1]),
                    rng.gen_range(0..grid[2]),
                ]);
            }
            let coords: Vec<Coord> = set.into_iter().collect();
            let bs = octree_encode(&coords, grid).unwrap();
            let (decoded, dgrid) = octree_decode(&bs).unwrap();
            assert_eq!(decoded, coords, "trial {trial}");
            assert_eq!(dgrid, grid);
        }
    }

    #[test]
    fn tampered_count_detected() {
        let bs = octree_encode(&[[0, 0, 0], [3, 3, 3]], [4, 4, 4]).unwrap();
        let mut bytes = bs.bytes().to_vec();
        bytes[11] = 9; // voxel count field
        let bad = Bitstream::from_bytes(bytes);
        assert!(matches!(octree_decode(&bad), Err(Error::Decode(_))));
    }

    #[test]
    fn truncated_stream_detected() {
        let bs = octree_encode(&[[0, 0, 0], [7, 5, 3]], [8, 8, 8]).unwrap();
        let bytes = bs.bytes()[..bs.bytes().len() - 1].to_vec();
        let bad = Bitstream::from_bytes(bytes);
        assert!(matches!(octree_decode(&bad), Err(Error::Decode(_))));
    }

    #[test]
    fn duplicate_coords_rejected() {
        assert!(matches!(
            octree_encode(&[[1, 1, 1], [1, 1, 1]], [4, 4, 4]),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn bitstream_bit_round_trip() {
        let mut rng = seeded_rng(102);
        let bits: Vec<u8> = (0..53).map(|_| rng.gen_range(0..2) as u8).collect();
        let bs = Bitstream::from_bits(&bits);
        assert_eq!(bs.len_bits(), 53);
        assert_eq!(bs.bits(), bits);
    }
}
