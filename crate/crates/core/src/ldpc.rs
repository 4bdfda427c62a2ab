//! Regular LDPC code over GF(2): Gallager-style construction with a 4-cycle
//! reduction pass, systematic encoding through a generator derived by
//! Gaussian elimination, and flooding sum-product decoding in the LLR domain.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng};

/// Regular (dv, dc) parity-check code with systematic generator.
#[derive(Debug, Clone)]
pub struct LdpcCode {
    /// Codeword length in bits.
    pub n: usize,
    /// Message length in bits (rank deficiency of H is absorbed here).
    pub k: usize,
    pub dv: usize,
    pub dc: usize,
    pub seed: u64,
    /// Column indices per check row.
    rows: Vec<Vec<usize>>,
    /// Check indices per variable column.
    cols: Vec<Vec<usize>>,
    /// k x n generator rows as bit vectors.
    generator: Vec<Vec<u8>>,
    /// Codeword positions carrying message bits verbatim.
    message_cols: Vec<usize>,
}

/// Result of one codeword decode.
#[derive(Debug, Clone)]
pub struct DecodeOutput {
    /// Hard-decision message bits (positions `message_cols`).
    pub message: Vec<u8>,
    /// Full hard-decision codeword.
    pub codeword: Vec<u8>,
    /// True when the syndrome reached zero within the iteration budget.
    pub converged: bool,
    /// Iterations consumed; 0 when the channel hard decision was already valid.
    pub iterations: usize,
}

impl LdpcCode {
    pub fn design_rate(&self) -> f64 {
        1.0 - self.dv as f64 / self.dc as f64
    }

    pub fn rate(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    pub fn check_count(&self) -> usize {
        self.rows.len()
    }

    pub fn message_cols(&self) -> &[usize] {
        &self.message_cols
    }

    pub fn row(&self, check: usize) -> &[usize] {
        &self.rows[check]
    }

    /// Column weight of each variable (dv for all columns by construction).
    pub fn column_weight(&self, col: usize) -> usize {
        self.cols[col].len()
    }

    pub fn syndrome_is_zero(&self, codeword: &[u8]) -> bool {
        self.rows
            .iter()
            .all(|row| row.iter().fold(0u8, |p, &c| p ^ codeword[c]) == 0)
    }
}

/// Builds a regular Gallager code with `n = m * dc` and `m * dv` checks.
pub fn ldpc_build(m: usize, dv: usize, dc: usize, seed: u64) -> Result<LdpcCode> {
    if m == 0 || dv == 0 || dc == 0 {
        return Err(Error::Config("ldpc parameters must be positive".into()));
    }
    let n = m * dc;
    if (n * dv) % dc != 0 {
        return Err(Error::Config(format!(
            "n*dv = {} not divisible by dc = {dc}",
            n * dv
        )));
    }
    if dv >= dc {
        return Err(Error::Config("ldpc requires dv < dc for positive rate".into()));
    }

    const RESTARTS: u64 = 50;
    for attempt in 0..RESTARTS {
        let attempt_seed = derive_seed(seed, 0xC0DE + attempt);
        if let Some(rows) = build_bands(m, dv, dc, attempt_seed) {
            return finish_code(n, dv, dc, seed, rows);
        }
    }
    Err(Error::Seed(format!(
        "ldpc 4-cycle removal failed after {RESTARTS} restarts (seed {seed})"
    )))
}

/// Assembles the band permutations and removes 4-cycles by hill-climbing
/// column swaps; returns None when the attempt stalls.
fn build_bands(m: usize, dv: usize, dc: usize, seed: u64) -> Option<Vec<Vec<usize>>> {
    let n = m * dc;
    let mut rng = seeded_rng(seed);

    // perms[b] maps position -> column; row j of band b takes positions
    // j*dc..(j+1)*dc. Band 0 is the identity (contiguous column groups).
    let mut perms: Vec<Vec<usize>> = Vec::with_capacity(dv);
    perms.push((0..n).collect());
    for _ in 1..dv {
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(&mut rng);
        perms.push(p);
    }

    let rows_of = |perms: &[Vec<usize>]| -> Vec<Vec<usize>> {
        let mut rows = Vec::with_capacity(m * dv);
        for p in perms {
            for j in 0..m {
                let mut row: Vec<usize> = p[j * dc..(j + 1) * dc].to_vec();
                row.sort_unstable();
                rows.push(row);
            }
        }
        rows
    };

    let mut count = count_4cycles(&rows_of(&perms));
    let budget = 200 * n;
    for _ in 0..budget {
        if count == 0 {
            return Some(rows_of(&perms));
        }
        // swap two positions within a random non-identity band
        let band = 1 + (rng.gen_range(0..dv - 1));
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if i == j {
            continue;
        }
        perms[band].swap(i, j);
        let new_count = count_4cycles(&rows_of(&perms));
        if new_count <= count {
            count = new_count;
        } else {
            perms[band].swap(i, j);
        }
    }
    if count == 0 {
        Some(rows_of(&perms))
    } else {
        None
    }
}

/// Number of column pairs shared by more than one check (each is a 4-cycle).
fn count_4cycles(rows: &[Vec<usize>]) -> usize {
    let mut pairs: HashMap<(usize, usize), usize> = HashMap::new();
    for row in rows {
        for a in 0..row.len() {
            for b in a + 1..row.len() {
                *pairs.entry((row[a], row[b])).or_insert(0) += 1;
            }
        }
    }
    pairs.values().map(|&c| c * (c - 1) / 2).sum()
}

fn finish_code(
    n: usize,
    dv: usize,
    dc: usize,
    seed: u64,
    rows: Vec<Vec<usize>>,
) -> Result<LdpcCode> {
    let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (check, row) in rows.iter().enumerate() {
        for &c in row {
            cols[c].push(check);
        }
    }

    // reduced row echelon form of H over GF(2), rows as u64 bitsets
    let words = n.div_ceil(64);
    let mut rref: Vec<Vec<u64>> = rows
        .iter()
        .map(|row| {
            let mut bits = vec![0u64; words];
            for &c in row {
                bits[c / 64] |= 1 << (c % 64);
            }
            bits
        })
        .collect();

    let get = |row: &[u64], c: usize| row[c / 64] >> (c % 64) & 1 == 1;
    let mut pivot_of_col: Vec<Option<usize>> = vec![None; n];
    let mut rank = 0;
    for col in 0..n {
        let Some(pivot_row) = (rank..rref.len()).find(|&r| get(&rref[r], col)) else {
            continue;
        };
        rref.swap(rank, pivot_row);
        let pivot = rref[rank].clone();
        for (r, row) in rref.iter_mut().enumerate() {
            if r != rank && get(row, col) {
                for (w, p) in row.iter_mut().zip(&pivot) {
                    *w ^= p;
                }
            }
        }
        pivot_of_col[col] = Some(rank);
        rank += 1;
    }

    let k = n - rank;
    let message_cols: Vec<usize> = (0..n).filter(|&c| pivot_of_col[c].is_none()).collect();
    debug_assert_eq!(message_cols.len(), k);

    // generator row j = codeword for unit message e_j; every RREF row links
    // one pivot column to free columns only, so parity bits read off directly
    let mut generator = vec![vec![0u8; n]; k];
    for (j, &col) in message_cols.iter().enumerate() {
        generator[j][col] = 1;
        for (pc, pr) in pivot_of_col.iter().enumerate() {
            if let Some(r) = pr {
                if get(&rref[*r], col) {
                    generator[j][pc] = 1;
                }
            }
        }
    }

    let code = LdpcCode {
        n,
        k,
        dv,
        dc,
        seed,
        rows,
        cols,
        generator,
        message_cols,
    };
    // defining identity G * H^T = 0
    for g in &code.generator {
        if !code.syndrome_is_zero(g) {
            return Err(Error::Seed("generator does not satisfy parity checks".into()));
        }
    }
    Ok(code)
}

/// Systematic encode of exactly `k` message bits.
pub fn ldpc_encode(code: &LdpcCode, message: &[u8]) -> Result<Vec<u8>> {
    if message.len() != code.k {
        return Err(Error::Shape(format!(
            "message length {} != k {}",
            message.len(),
            code.k
        )));
    }
    let mut codeword = vec![0u8; code.n];
    for (bit, row) in message.iter().zip(&code.generator) {
        if *bit != 0 {
            for (c, g) in codeword.iter_mut().zip(row) {
                *c ^= g;
            }
        }
    }
    Ok(codeword)
}

const LLR_CLAMP: f64 = 30.0;

/// Flooding sum-product decode of one codeword from channel LLRs
/// (positive LLR favors bit 0). Non-convergence is reported via the flag,
/// not as an error.
pub fn ldpc_decode(code: &LdpcCode, llr: &[f64], max_iters: usize) -> Result<DecodeOutput> {
    if llr.len() != code.n {
        return Err(Error::Shape(format!(
            "llr length {} != n {}",
            llr.len(),
            code.n
        )));
    }

    let hard = |totals: &[f64]| -> Vec<u8> {
        totals.iter().map(|&l| u8::from(l < 0.0)).collect()
    };
    let extract = |codeword: &[u8]| -> Vec<u8> {
        code.message_cols.iter().map(|&c| codeword[c]).collect()
    };

    // channel hard decision may already satisfy all checks
    let initial = hard(llr);
    if code.syndrome_is_zero(&initial) {
        return Ok(DecodeOutput {
            message: extract(&initial),
            codeword: initial,
            converged: true,
            iterations: 0,
        });
    }

    // edge arrays laid out row-major over (check, position)
    let offsets: Vec<usize> = {
        let mut o = vec![0usize];
        for row in &code.rows {
            o.push(o.last().unwrap() + row.len());
        }
        o
    };
    let edge_count = *offsets.last().unwrap();
    // per-variable list of owning edges
    let mut var_edges: Vec<Vec<usize>> = vec![Vec::with_capacity(code.dv); code.n];
    for (check, row) in code.rows.iter().enumerate() {
        for (pos, &c) in row.iter().enumerate() {
            var_edges[c].push(offsets[check] + pos);
        }
    }

    let mut msg_vc: Vec<f64> = vec![0.0; edge_count];
    for (check, row) in code.rows.iter().enumerate() {
        for (pos, &c) in row.iter().enumerate() {
            msg_vc[offsets[check] + pos] = llr[c];
        }
    }
    let mut msg_cv: Vec<f64> = vec![0.0; edge_count];
    let mut tanh_buf: Vec<f64> = vec![0.0; code.dc.max(2)];

    for iter in 1..=max_iters {
        // check update: exclude-one products via prefix/suffix sweeps
        for (check, row) in code.rows.iter().enumerate() {
            let base = offsets[check];
            let deg = row.len();
            for p in 0..deg {
                tanh_buf[p] = (msg_vc[base + p] / 2.0).tanh();
            }
            for p in 0..deg {
                let mut prod = 1.0;
                for (q, t) in tanh_buf[..deg].iter().enumerate() {
                    if q != p {
                        prod *= t;
                    }
                }
                let prod = prod.clamp(-0.999_999_999_999, 0.999_999_999_999);
                msg_cv[base + p] = (2.0 * prod.atanh()).clamp(-LLR_CLAMP, LLR_CLAMP);
            }
        }

        // variable update and posterior
        let mut totals = llr.to_vec();
        for (v, edges) in var_edges.iter().enumerate() {
            for &e in edges {
                totals[v] += msg_cv[e];
            }
        }
        for (check, row) in code.rows.iter().enumerate() {
            let base = offsets[check];
            for (pos, &c) in row.iter().enumerate() {
                msg_vc[base + pos] = (totals[c] - msg_cv[base + pos]).clamp(-1e9, 1e9);
            }
        }

        let decision = hard(&totals);
        if code.syndrome_is_zero(&decision) {
            return Ok(DecodeOutput {
                message: extract(&decision),
                codeword: decision,
                converged: true,
                iterations: iter,
            });
        }
        if iter == max_iters {
            return Ok(DecodeOutput {
                message: extract(&decision),
                codeword: decision,
                converged: false,
                iterations: iter,
            });
        }
    }
    unreachable!("loop returns on final iteration")
}
