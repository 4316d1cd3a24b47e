//! Lossless coding of quantization codes.
//!
//! Codes are zigzag-mapped to unsigned symbols (0, -1, 1, -2, ... -> 0, 1, 2,
//! 3, ...) and coded with either an adaptive
//! binary range coder over a bit-tree of the symbol (one adaptive context per
//! tree node) or a static canonical Huffman code. Plain bit-packing is used
//! whenever it is smaller than the selected coder's output.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyCoder {
    #[default]
    Range,
    Huffman,
}

const KIND_RAW: u8 = 0;
const KIND_RANGE: u8 = 1;
const KIND_HUFFMAN: u8 = 2;

/// kind u8, bits u8, symbol count u32, crc32 u32.
pub const PAYLOAD_HEADER_LEN: usize = 10;

const PROB_BITS: u32 = 15;
const PROB_ONE: u32 = 1 << PROB_BITS;
const TOP: u32 = 1 << 24;
const COUNT_LIMIT: u32 = 1 << 16;

/// Adaptive estimate of P(bit = 0) from halved-on-overflow counts, starting
/// from the Krichevsky-Trofimov prior.
#[derive(Clone, Copy)]
struct BitModel {
    c0: u32,
    c1: u32,
}

impl BitModel {
    const fn new() -> Self {
        Self { c0: 1, c1: 1 }
    }

    fn p0(&self) -> u32 {
        let p = ((self.c0 as u64) << PROB_BITS) / (self.c0 + self.c1) as u64;
        (p as u32).clamp(1, PROB_ONE - 1)
    }

    fn update(&mut self, bit: u32) {
        if bit == 0 {
            self.c0 += 2;
        } else {
            self.c1 += 2;
        }
        if self.c0 + self.c1 > COUNT_LIMIT {
            self.c0 = self.c0.div_ceil(2);
            self.c1 = self.c1.div_ceil(2);
        }
    }
}

struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl RangeEncoder {
    fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                self.out.push(temp.wrapping_add(carry));
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    fn encode(&mut self, model: &mut BitModel, bit: u32) {
        let bound = (self.range >> PROB_BITS) * model.p0();
        if bit == 0 {
            self.range = bound;
        } else {
            self.low += bound as u64;
            self.range -= bound;
        }
        model.update(bit);
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        // The first byte is always zero; the decoder re-inserts it.
        self.out.remove(0);
        self.out
    }
}

struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    range: u32,
    code: u32,
}

impl<'a> RangeDecoder<'a> {
    fn new(data: &'a [u8]) -> Self {
        let mut d = Self {
            data,
            pos: 0,
            range: u32::MAX,
            code: 0,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte() as u32;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.data.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    fn decode(&mut self, model: &mut BitModel) -> u32 {
        let bound = (self.range >> PROB_BITS) * model.p0();
        let bit = if self.code < bound {
            self.range = bound;
            0
        } else {
            self.code -= bound;
            self.range -= bound;
            1
        };
        model.update(bit);
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte() as u32;
        }
        bit
    }
}

/// Range-codes `bits`-wide symbols through an adaptive bit-tree.
pub fn range_encode(symbols: &[u32], bits: u8) -> Vec<u8> {
    let mut models = vec![BitModel::new(); 1 << bits];
    let mut enc = RangeEncoder::new();
    for &s in symbols {
        let mut node = 1usize;
        for k in (0..bits).rev() {
            let bit = (s >> k) & 1;
            enc.encode(&mut models[node], bit);
            node = 2 * node + bit as usize;
        }
    }
    enc.finish()
}

pub fn range_decode(body: &[u8], count: usize, bits: u8) -> Vec<u32> {
    let mut models = vec![BitModel::new(); 1 << bits];
    let mut dec = RangeDecoder::new(body);
    (0..count)
        .map(|_| {
            let mut node = 1usize;
            for _ in 0..bits {
                node = 2 * node + dec.decode(&mut models[node]) as usize;
            }
            (node - (1 << bits)) as u32
        })
        .collect()
}

struct BitWriter {
    out: Vec<u8>,
    acc: u64,
    n: u32,
}

impl BitWriter {
    fn new() -> Self {
        Self {
            out: Vec::new(),
            acc: 0,
            n: 0,
        }
    }

    /// Appends the low `len` bits of `value`, most significant first.
    fn put(&mut self, value: u64, len: u32) {
        for k in (0..len).rev() {
            self.acc = (self.acc << 1) | ((value >> k) & 1);
            self.n += 1;
            if self.n == 8 {
                self.out.push(self.acc as u8);
                self.acc = 0;
                self.n = 0;
            }
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.n > 0 {
            self.out.push((self.acc << (8 - self.n)) as u8);
        }
        self.out
    }
}

struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl BitReader<'_> {
    fn bit(&mut self) -> Result<u64> {
        let byte = self
            .data
            .get(self.pos / 8)
            .ok_or_else(|| Error::format("payload", "bit stream ended early"))?;
        let b = (byte >> (7 - self.pos % 8)) & 1;
        self.pos += 1;
        Ok(b as u64)
    }

    fn get(&mut self, len: u32) -> Result<u64> {
        let mut v = 0;
        for _ in 0..len {
            v = (v << 1) | self.bit()?;
        }
        Ok(v)
    }
}

fn raw_encode(symbols: &[u32], bits: u8) -> Vec<u8> {
    let mut w = BitWriter::new();
    for &s in symbols {
        w.put(s as u64, bits as u32);
    }
    w.finish()
}

fn raw_decode(body: &[u8], count: usize, bits: u8) -> Result<Vec<u32>> {
    let mut r = BitReader { data: body, pos: 0 };
    (0..count).map(|_| Ok(r.get(bits as u32)? as u32)).collect()
}

/// Huffman code lengths for the symbols present in `hist`.
fn huffman_lengths(hist: &BTreeMap<u32, u64>) -> BTreeMap<u32, u32> {
    if hist.len() == 1 {
        return hist.keys().map(|&s| (s, 1)).collect();
    }
    // Nodes: leaves first, then merged nodes; ties break on node id.
    let mut parent: Vec<usize> = Vec::new();
    let mut heap = BinaryHeap::new();
    for (id, (_, &count)) in hist.iter().enumerate() {
        heap.push(Reverse((count, id)));
        parent.push(usize::MAX);
    }
    while heap.len() > 1 {
        let Reverse((a, ia)) = heap.pop().expect("two nodes");
        let Reverse((b, ib)) = heap.pop().expect("two nodes");
        let id = parent.len();
        parent.push(usize::MAX);
        parent[ia] = id;
        parent[ib] = id;
        heap.push(Reverse((a + b, id)));
    }
    hist.keys()
        .enumerate()
        .map(|(id, &s)| {
            let mut depth = 0;
            let mut node = id;
            while parent[node] != usize::MAX {
                node = parent[node];
                depth += 1;
            }
            (s, depth)
        })
        .collect()
}

/// Canonical codes: ordered by (length, symbol).
fn canonical(lengths: &BTreeMap<u32, u32>) -> Vec<(u32, u32, u64)> {
    let mut order: Vec<(u32, u32)> = lengths.iter().map(|(&s, &l)| (l, s)).collect();
    order.sort_unstable();
    let mut code = 0u64;
    let mut prev_len = 0;
    let mut out = Vec::with_capacity(order.len());
    for (k, &(len, sym)) in order.iter().enumerate() {
        if k > 0 {
            code = (code + 1) << (len - prev_len);
        } else {
            code = 0;
        }
        prev_len = len;
        out.push((sym, len, code));
    }
    out
}

fn huffman_encode(symbols: &[u32]) -> Vec<u8> {
    let mut hist = BTreeMap::new();
    for &s in symbols {
        *hist.entry(s).or_insert(0u64) += 1;
    }
    let lengths = huffman_lengths(&hist);
    let table = canonical(&lengths);
    let mut out = (lengths.len() as u32).to_le_bytes().to_vec();
    for (&sym, &len) in &lengths {
        out.extend_from_slice(&(sym as u16).to_le_bytes());
        out.push(len as u8);
    }
    let codes: BTreeMap<u32, (u32, u64)> = table.iter().map(|&(s, l, c)| (s, (l, c))).collect();
    let mut w = BitWriter::new();
    for s in symbols {
        let (len, code) = codes[s];
        w.put(code, len);
    }
    out.extend(w.finish());
    out
}

fn huffman_decode(body: &[u8], count: usize) -> Result<Vec<u32>> {
    let bad = |msg: &str| Error::format("Huffman payload", msg.to_string());
    let n = u32::from_le_bytes(body.get(..4).ok_or_else(|| bad("missing table"))?.try_into().unwrap()) as usize;
    let table_end = 4 + 3 * n;
    let table = body.get(4..table_end).ok_or_else(|| bad("truncated table"))?;
    let mut lengths = BTreeMap::new();
    for e in table.chunks(3) {
        let len = e[2] as u32;
        if len == 0 || len > 63 {
            return Err(bad("invalid code length"));
        }
        lengths.insert(u16::from_le_bytes([e[0], e[1]]) as u32, len);
    }
    if count > 0 && lengths.is_empty() {
        return Err(bad("empty table"));
    }
    let codes: BTreeMap<(u32, u64), u32> = canonical(&lengths).into_iter().map(|(s, l, c)| ((l, c), s)).collect();
    let max_len = lengths.values().copied().max().unwrap_or(0);
    let mut r = BitReader {
        data: &body[table_end..],
        pos: 0,
    };
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (mut code, mut len) = (0u64, 0u32);
        loop {
            code = (code << 1) | r.bit()?;
            len += 1;
            if let Some(&s) = codes.get(&(len, code)) {
                out.push(s);
                break;
            }
            if len >= max_len {
                return Err(Error::Checksum("Huffman payload"));
            }
        }
    }
    Ok(out)
}

fn code_range(bits: u8) -> Result<i64> {
    if !(2..=16).contains(&bits) {
        return Err(Error::Config(format!("bit width must be in 2..=16, got {bits}")));
    }
    Ok((1i64 << (bits - 1)) - 1)
}

fn zigzag(c: i32) -> u32 {
    if c >= 0 {
        2 * c as u32
    } else {
        2 * c.unsigned_abs() - 1
    }
}

fn unzigzag(s: u32) -> i32 {
    if s % 2 == 0 {
        (s / 2) as i32
    } else {
        -(s.div_ceil(2) as i32)
    }
}

/// Checksum over the header fields before it and the coded body.
fn payload_crc(head: &[u8], body: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(head);
    h.update(body);
    h.finalize()
}

/// Codes signed quantization codes of width `bits` into a self-describing
/// payload.
pub fn encode_codes(codes: &[i32], bits: u8, coder: EntropyCoder) -> Result<Vec<u8>> {
    let max = code_range(bits)?;
    let symbols = codes
        .iter()
        .map(|&c| {
            if (c as i64).abs() > max {
                Err(Error::Usage(format!("code {c} outside the {bits}-bit range")))
            } else {
                Ok(zigzag(c))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let raw = raw_encode(&symbols, bits);
    let coded = match coder {
        EntropyCoder::Range => (KIND_RANGE, range_encode(&symbols, bits)),
        EntropyCoder::Huffman => (KIND_HUFFMAN, huffman_encode(&symbols)),
    };
    let (kind, body) = if coded.1.len() < raw.len() { coded } else { (KIND_RAW, raw) };
    let mut out = Vec::with_capacity(PAYLOAD_HEADER_LEN + body.len());
    out.push(kind);
    out.push(bits);
    out.extend_from_slice(&(codes.len() as u32).to_le_bytes());
    let crc = payload_crc(&out, &body);
    out.extend_from_slice(&crc.to_le_bytes());
    out.extend(body);
    Ok(out)
}

/// Inverse of [`encode_codes`]: returns the bit width and the codes.
pub fn decode_codes(payload: &[u8]) -> Result<(u8, Vec<i32>)> {
    if payload.len() < PAYLOAD_HEADER_LEN {
        return Err(Error::format("payload", "shorter than its header"));
    }
    let (kind, bits) = (payload[0], payload[1]);
    let max = code_range(bits).map_err(|_| Error::Checksum("payload header"))?;
    let count = u32::from_le_bytes(payload[2..6].try_into().unwrap()) as usize;
    let crc = u32::from_le_bytes(payload[6..10].try_into().unwrap());
    let body = &payload[PAYLOAD_HEADER_LEN..];
    if payload_crc(&payload[..6], body) != crc {
        return Err(Error::Checksum("payload"));
    }
    let symbols = match kind {
        KIND_RAW => raw_decode(body, count, bits).map_err(|_| Error::Checksum("payload"))?,
        KIND_RANGE => range_decode(body, count, bits),
        KIND_HUFFMAN => huffman_decode(body, count).map_err(|_| Error::Checksum("payload"))?,
        _ => return Err(Error::Checksum("payload header")),
    };
    if symbols.iter().any(|&s| s as i64 > 2 * max) {
        return Err(Error::Checksum("payload"));
    }
    Ok((bits, symbols.into_iter().map(unzigzag).collect()))
}

/// Zeroth-order empirical entropy of `codes` in bits per symbol.
pub fn empirical_entropy(codes: &[i32]) -> f64 {
    let mut hist = BTreeMap::new();
    for &c in codes {
        *hist.entry(c).or_insert(0usize) += 1;
    }
    let n = codes.len() as f64;
    hist.values().map(|&k| {
        let p = k as f64 / n;
        -p * p.log2()
    }).sum()
}
