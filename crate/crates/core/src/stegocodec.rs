//! Embeds payload bits into, and extracts them from, the `n` low-order bits
//! of selected weights.
//!
//! Bit conventions, fixed permanently:
//!
//! * Payload bytes feed the stream MSB-first; within each weight the highest
//!   of the `n` overwritten positions receives the earlier stream bit.
//! * Fill mode cycles the payload to cover every available bit; an empty
//!   payload switches to the seeded pseudorandom filler stream.
//! * Message mode writes a self-delimiting frame (`magic u32, length u64,
//!   payload`, all MSB-first) and pads the rest with the filler stream so
//!   low-order-bit statistics stay uniform.
//!
//! For `n <= 23` only mantissa bits move, so sign and exponent of every
//! finite weight survive and the perturbation is bounded by `(2^n - 1)`
//! ulps. From `n = 24` upward exponent bits are fair game: NaN and Inf
//! creation is permitted and propagated to the evaluation layer.

use std::fmt;

use crate::rng::SplitMix64;
use crate::weightstore::{count_selected, selected_tensors, Selector, StoreError, WeightStore};

/// Frame marker for message mode ("STEG" read as a big-endian u32).
pub const FRAME_MAGIC: u32 = 0x5354_4547;
/// Frame overhead: 32 magic bits plus a 64-bit payload length.
pub const FRAME_HEADER_BITS: u64 = 96;

#[derive(Debug)]
pub enum CodecError {
    Store(StoreError),
    InvalidBitCount(u8),
    WrongMode {
        expected: EmbedMode,
        actual: EmbedMode,
    },
    CapacityExceeded {
        needed_bits: u64,
        available_bits: u64,
    },
    FrameNotFound {
        found_magic: u32,
    },
    LengthOverrun {
        declared_bytes: u64,
        available_bits: u64,
    },
}

impl fmt::Display for CodecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Store(e) => write!(f, "{e}"),
            Self::InvalidBitCount(n) => write!(f, "bit count {n} outside [0, 32]"),
            Self::WrongMode { expected, actual } => {
                write!(f, "plan mode is {actual:?}, expected {expected:?}")
            }
            Self::CapacityExceeded {
                needed_bits,
                available_bits,
            } => write!(
                f,
                "capacity exceeded: need {needed_bits} bits, only {available_bits} available"
            ),
            Self::FrameNotFound { found_magic } => {
                write!(f, "no message frame: magic {found_magic:#010x}")
            }
            Self::LengthOverrun {
                declared_bytes,
                available_bits,
            } => write!(
                f,
                "frame declares {declared_bytes} payload bytes but only {available_bits} bits exist"
            ),
        }
    }
}

impl std::error::Error for CodecError {}

impl From<StoreError> for CodecError {
    fn from(e: StoreError) -> Self {
        CodecError::Store(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedMode {
    /// Overwrite every selected slot, for capacity measurement.
    Fill,
    /// Framed, self-delimiting, recoverable embedding.
    Message,
}

/// How many low-order bits to overwrite per weight, in which mode, and the
/// seed for the filler stream. `n = 0` is the identity plan.
#[derive(Debug, Clone, Copy)]
pub struct BitPlan {
    n: u8,
    mode: EmbedMode,
    seed: u64,
}

impl BitPlan {
    pub fn new(n: u8, mode: EmbedMode, seed: u64) -> Result<Self, CodecError> {
        if n > 32 {
            return Err(CodecError::InvalidBitCount(n));
        }
        Ok(BitPlan { n, mode, seed })
    }

    pub fn fill(n: u8, seed: u64) -> Result<Self, CodecError> {
        Self::new(n, EmbedMode::Fill, seed)
    }

    pub fn message(n: u8, seed: u64) -> Result<Self, CodecError> {
        Self::new(n, EmbedMode::Message, seed)
    }

    pub fn bits(&self) -> u8 {
        self.n
    }

    pub fn mode(&self) -> EmbedMode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Total payload bits the selection offers: `n x count_selected`.
pub fn bits_available(store: &WeightStore, sel: &Selector, n: u8) -> Result<u64, CodecError> {
    if n > 32 {
        return Err(CodecError::InvalidBitCount(n));
    }
    Ok(n as u64 * count_selected(store, sel)?)
}

/// Unit in the last place of a finite f32, in exact f64 arithmetic. For
/// subnormals this is the subnormal spacing 2^-149.
pub fn ulp(value: f32) -> f64 {
    let exp_bits = (value.to_bits() >> 23) & 0xFF;
    debug_assert!(exp_bits != 0xFF, "ulp of NaN/Inf is not meaningful");
    let exponent = if exp_bits == 0 { 1 } else { exp_bits as i32 };
    ((exponent - 127 - 23) as f64).exp2()
}

enum BitSource<'a> {
    Cycle { bytes: &'a [u8], bit: usize },
    Prng { rng: SplitMix64, buf: u64, left: u8 },
}

impl<'a> BitSource<'a> {
    fn cycle(bytes: &'a [u8]) -> Self {
        BitSource::Cycle { bytes, bit: 0 }
    }

    fn prng(seed: u64) -> Self {
        BitSource::Prng {
            rng: SplitMix64::new(seed),
            buf: 0,
            left: 0,
        }
    }

    fn next_bit(&mut self) -> u32 {
        match self {
            BitSource::Cycle { bytes, bit } => {
                let byte = bytes[*bit / 8];
                let b = (byte >> (7 - (*bit % 8))) & 1;
                *bit = (*bit + 1) % (bytes.len() * 8);
                b as u32
            }
            BitSource::Prng { rng, buf, left } => {
                if *left == 0 {
                    *buf = rng.next_u64();
                    *left = 64;
                }
                *left -= 1;
                ((*buf >> *left) & 1) as u32
            }
        }
    }
}

/// Finite frame bits first, then the filler stream.
struct FramedSource<'a> {
    frame: Vec<u8>,
    bit: usize,
    filler: BitSource<'a>,
}

impl<'a> FramedSource<'a> {
    fn new(payload: &[u8], seed: u64) -> Self {
        let mut frame = Vec::with_capacity(12 + payload.len());
        frame.extend_from_slice(&FRAME_MAGIC.to_be_bytes());
        frame.extend_from_slice(&(payload.len() as u64).to_be_bytes());
        frame.extend_from_slice(payload);
        FramedSource {
            frame,
            bit: 0,
            filler: BitSource::prng(seed),
        }
    }

    fn next_bit(&mut self) -> u32 {
        if self.bit < self.frame.len() * 8 {
            let byte = self.frame[self.bit / 8];
            let b = (byte >> (7 - (self.bit % 8))) & 1;
            self.bit += 1;
            b as u32
        } else {
            self.filler.next_bit()
        }
    }
}

fn low_mask(n: u8) -> u32 {
    if n == 0 {
        0
    } else {
        u32::MAX >> (32 - n as u32)
    }
}

fn overwrite_selected(
    store: &WeightStore,
    tensor_indices: &[usize],
    n: u8,
    mut next_bit: impl FnMut() -> u32,
) -> WeightStore {
    let mut out = store.clone();
    if n == 0 {
        return out;
    }
    let mask = low_mask(n);
    for &ti in tensor_indices {
        for w in out.tensor_mut(ti).data_mut() {
            let mut field: u32 = 0;
            for _ in 0..n {
                field = (field << 1) | next_bit();
            }
            *w = f32::from_bits((w.to_bits() & !mask) | field);
        }
    }
    out
}

/// Overwrites the low `n` bits of every selected weight for capacity
/// measurement. The payload is cycled MSB-first; an empty payload uses the
/// seeded filler stream instead. The input store is not mutated.
pub fn embed_fill(
    store: &WeightStore,
    sel: &Selector,
    plan: &BitPlan,
    payload: &[u8],
) -> Result<WeightStore, CodecError> {
    if plan.mode != EmbedMode::Fill {
        return Err(CodecError::WrongMode {
            expected: EmbedMode::Fill,
            actual: plan.mode,
        });
    }
    let indices = selected_tensors(store, sel)?;
    let mut source = if payload.is_empty() {
        BitSource::prng(plan.seed)
    } else {
        BitSource::cycle(payload)
    };
    Ok(overwrite_selected(store, &indices, plan.n, || {
        source.next_bit()
    }))
}

/// Embeds a recoverable framed message; remaining capacity is padded with
/// the seeded filler stream.
pub fn embed_message(
    store: &WeightStore,
    sel: &Selector,
    plan: &BitPlan,
    payload: &[u8],
) -> Result<WeightStore, CodecError> {
    if plan.mode != EmbedMode::Message {
        return Err(CodecError::WrongMode {
            expected: EmbedMode::Message,
            actual: plan.mode,
        });
    }
    let available = bits_available(store, sel, plan.n)?;
    let needed = FRAME_HEADER_BITS + 8 * payload.len() as u64;
    if needed > available {
        return Err(CodecError::CapacityExceeded {
            needed_bits: needed,
            available_bits: available,
        });
    }
    let indices = selected_tensors(store, sel)?;
    let mut source = FramedSource::new(payload, plan.seed);
    Ok(overwrite_selected(store, &indices, plan.n, || {
        source.next_bit()
    }))
}

/// Reads bits from the low `n` positions of selected weights in embedding
/// order.
struct BitReader<'a> {
    store: &'a WeightStore,
    tensor_indices: Vec<usize>,
    n: u8,
    cursor: usize,
    slot: usize,
    bit: u8,
    remaining: u64,
}

impl<'a> BitReader<'a> {
    fn new(store: &'a WeightStore, sel: &Selector, n: u8) -> Result<Self, CodecError> {
        let remaining = bits_available(store, sel, n)?;
        Ok(BitReader {
            store,
            tensor_indices: selected_tensors(store, sel)?,
            n,
            cursor: 0,
            slot: 0,
            bit: 0,
            remaining,
        })
    }

    fn remaining(&self) -> u64 {
        self.remaining
    }

    fn next_bit(&mut self) -> Option<u32> {
        if self.remaining == 0 {
            return None;
        }
        let tensor = &self.store.tensors()[self.tensor_indices[self.cursor]];
        let bits = tensor.data()[self.slot].to_bits();
        let b = (bits >> (self.n - 1 - self.bit)) & 1;
        self.bit += 1;
        if self.bit == self.n {
            self.bit = 0;
            self.slot += 1;
            if self.slot == tensor.len() {
                self.slot = 0;
                self.cursor += 1;
            }
        }
        self.remaining -= 1;
        Some(b)
    }

    fn read_word(&mut self, width: u8) -> Option<u64> {
        let mut v: u64 = 0;
        for _ in 0..width {
            v = (v << 1) | self.next_bit()? as u64;
        }
        Some(v)
    }
}

/// Recovers a payload previously written by [`embed_message`] with the same
/// selector and `n`.
pub fn extract_message(
    store: &WeightStore,
    sel: &Selector,
    n: u8,
) -> Result<Vec<u8>, CodecError> {
    if n == 0 || n > 32 {
        return Err(CodecError::InvalidBitCount(n));
    }
    let mut reader = BitReader::new(store, sel, n)?;
    let magic = reader.read_word(32).ok_or(CodecError::FrameNotFound {
        found_magic: 0,
    })? as u32;
    if magic != FRAME_MAGIC {
        return Err(CodecError::FrameNotFound { found_magic: magic });
    }
    let length = reader.read_word(64).ok_or(CodecError::LengthOverrun {
        declared_bytes: 0,
        available_bits: bits_available(store, sel, n)?,
    })?;
    if length.checked_mul(8).is_none() || length * 8 > reader.remaining() {
        return Err(CodecError::LengthOverrun {
            declared_bytes: length,
            available_bits: bits_available(store, sel, n)?,
        });
    }
    let mut payload = Vec::with_capacity(length as usize);
    for _ in 0..length {
        payload.push(reader.read_word(8).expect("length checked") as u8);
    }
    Ok(payload)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weightstore::{Role, TensorRecord};

    fn store_of(values: &[f32]) -> WeightStore {
        WeightStore::new(vec![TensorRecord::new(
            "w",
            Role::Output,
            vec![values.len() as u32],
            values.to_vec(),
        )
        .unwrap()])
        .unwrap()
    }

    #[test]
    fn bits_available_matches_paper_lr_case() {
        let store = store_of(&vec![1.0; 2560]);
        assert_eq!(bits_available(&store, &Selector::All, 22).unwrap(), 56_320);
        assert_eq!(bits_available(&store, &Selector::All, 0).unwrap(), 0);
    }

    #[test]
    fn bits_available_small_case() {
        let store = WeightStore::new(vec![
            TensorRecord::new("a", Role::Hidden, vec![3], vec![0.0; 3]).unwrap(),
            TensorRecord::new("b", Role::Output, vec![2], vec![0.0; 2]).unwrap(),
        ])
        .unwrap();
        assert_eq!(bits_available(&store, &Selector::All, 5).unwrap(), 25);
    }

    #[test]
    fn fill_replaces_low_bits_msb_first() {
        // Stream bits 1,0,1 into the low 3 bits of 1.0 (0x3F800000): the
        // highest overwritten position takes the first bit, so the field is
        // 0b101 and the result is 0x3F800005.
        let store = store_of(&[1.0]);
        let plan = BitPlan::fill(3, 0).unwrap();
        let out = embed_fill(&store, &Selector::All, &plan, &[0b1010_0000]).unwrap();
        assert_eq!(out.tensors()[0].data()[0].to_bits(), 0x3F80_0005);
    }

    #[test]
    fn fill_with_n0_is_identity() {
        let store = store_of(&[1.0, -2.5, 3.75]);
        let plan = BitPlan::fill(0, 42).unwrap();
        let out = embed_fill(&store, &Selector::All, &plan, b"payload").unwrap();
        assert_eq!(out, store);
        assert_eq!(out.to_bytes(), store.to_bytes());
    }

    #[test]
    fn fill_n32_all_zero_payload_produces_zero_bits() {
        let store = store_of(&[1.0, -123.456, f32::NAN]);
        let plan = BitPlan::fill(32, 0).unwrap();
        let out = embed_fill(&store, &Selector::All, &plan, &[0u8]).unwrap();
        for w in out.tensors()[0].data() {
            assert_eq!(w.to_bits(), 0x0000_0000);
        }
    }

    #[test]
    fn fill_cycles_short_payloads() {
        let store = store_of(&[0.0, 0.0]);
        let plan = BitPlan::fill(8, 0).unwrap();
        let out = embed_fill(&store, &Selector::All, &plan, &[0xAB]).unwrap();
        for w in out.tensors()[0].data() {
            assert_eq!(w.to_bits() & 0xFF, 0xAB);
        }
    }

    #[test]
    fn fill_leaves_unselected_tensors_untouched() {
        let store = WeightStore::new(vec![
            TensorRecord::new("h", Role::Hidden, vec![4], vec![1.5; 4]).unwrap(),
            TensorRecord::new("o", Role::Output, vec![4], vec![2.5; 4]).unwrap(),
        ])
        .unwrap();
        let plan = BitPlan::fill(13, 7).unwrap();
        let out = embed_fill(&store, &Selector::Output, &plan, &[]).unwrap();
        assert_eq!(out.tensors()[0], store.tensors()[0]);
        assert_ne!(out.tensors()[1], store.tensors()[1]);
    }

    #[test]
    fn high_bits_survive_embedding() {
        let mut rng = SplitMix64::new(99);
        let values: Vec<f32> = (0..64).map(|_| rng.next_normal() as f32).collect();
        let store = store_of(&values);
        for n in [1u8, 7, 13, 23] {
            let plan = BitPlan::fill(n, 3).unwrap();
            let out = embed_fill(&store, &Selector::All, &plan, &[]).unwrap();
            let mask = low_mask(n);
            for (a, b) in store.tensors()[0].data().iter().zip(out.tensors()[0].data()) {
                assert_eq!(a.to_bits() & !mask, b.to_bits() & !mask);
            }
        }
    }

    #[test]
    fn message_roundtrip_including_empty() {
        let store = store_of(&vec![1.0; 128]);
        for payload in [b"".as_slice(), b"A", b"hello weight stego"] {
            let plan = BitPlan::message(9, 21).unwrap();
            let out = embed_message(&store, &Selector::All, &plan, payload).unwrap();
            let back = extract_message(&out, &Selector::All, 9).unwrap();
            assert_eq!(back, payload);
        }
    }

    #[test]
    fn message_capacity_boundary_is_exact() {
        // 13 weights at n=8 give 104 bits; a 1-byte payload needs 96+8.
        let store = store_of(&vec![1.0; 13]);
        let plan = BitPlan::message(8, 0).unwrap();
        let ok = embed_message(&store, &Selector::All, &plan, b"A").unwrap();
        assert_eq!(extract_message(&ok, &Selector::All, 8).unwrap(), b"A");

        // One bit short: 103 available.
        let store = store_of(&vec![1.0; 103]);
        let plan = BitPlan::message(1, 0).unwrap();
        match embed_message(&store, &Selector::All, &plan, b"A") {
            Err(CodecError::CapacityExceeded {
                needed_bits,
                available_bits,
            }) => {
                assert_eq!(needed_bits, 104);
                assert_eq!(available_bits, 103);
            }
            other => panic!("expected CapacityExceeded, got {other:?}"),
        }
    }

    #[test]
    fn oversized_payload_reports_capacity() {
        let store = store_of(&vec![1.0; 16]);
        let plan = BitPlan::message(4, 0).unwrap();
        let payload = vec![0u8; 100];
        assert!(matches!(
            embed_message(&store, &Selector::All, &plan, &payload),
            Err(CodecError::CapacityExceeded { .. })
        ));
    }

    #[test]
    fn extract_without_frame_fails() {
        let store = store_of(&vec![1.0; 64]);
        let plan = BitPlan::fill(8, 1234).unwrap();
        let noise = embed_fill(&store, &Selector::All, &plan, &[]).unwrap();
        assert!(matches!(
            extract_message(&noise, &Selector::All, 8),
            Err(CodecError::FrameNotFound { .. })
        ));
    }

    #[test]
    fn absurd_length_reports_overrun() {
        // Craft a frame header by hand: valid magic, length 2^60.
        let mut crafted = Vec::new();
        crafted.extend_from_slice(&FRAME_MAGIC.to_be_bytes());
        crafted.extend_from_slice(&(1u64 << 60).to_be_bytes());
        let store = store_of(&vec![1.0; 96]);
        let plan = BitPlan::fill(1, 0).unwrap();
        let out = embed_fill(&store, &Selector::All, &plan, &crafted).unwrap();
        match extract_message(&out, &Selector::All, 1) {
            Err(CodecError::LengthOverrun { declared_bytes, .. }) => {
                assert_eq!(declared_bytes, 1 << 60)
            }
            other => panic!("expected LengthOverrun, got {other:?}"),
        }
    }

    #[test]
    fn perturbation_bounded_by_ulps_for_mantissa_bits() {
        let mut rng = SplitMix64::new(5);
        let values: Vec<f32> = (0..2000)
            .map(|_| (rng.next_normal() * 10.0) as f32)
            .collect();
        let store = store_of(&values);
        for n in [1u8, 8, 16, 23] {
            let plan = BitPlan::fill(n, 77).unwrap();
            let out = embed_fill(&store, &Selector::All, &plan, &[]).unwrap();
            let bound_ulps = ((1u64 << n) - 1) as f64;
            for (&a, &b) in values.iter().zip(out.tensors()[0].data()) {
                assert_eq!(a.is_sign_positive(), b.is_sign_positive());
                assert_eq!(a.to_bits() >> 23, b.to_bits() >> 23, "exponent must hold");
                let diff = (a as f64 - b as f64).abs();
                assert!(diff <= bound_ulps * ulp(a), "n={n} w={a} w'={b}");
            }
        }
    }

    #[test]
    fn filler_changes_about_half_the_bits() {
        let mut rng = SplitMix64::new(17);
        let values: Vec<f32> = (0..10_000).map(|_| rng.next_normal() as f32).collect();
        let store = store_of(&values);
        let n = 20u8;
        let plan = BitPlan::fill(n, 4242).unwrap();
        let out = embed_fill(&store, &Selector::All, &plan, &[]).unwrap();
        let mask = low_mask(n);
        let mut changed = 0u64;
        for (a, b) in values.iter().zip(out.tensors()[0].data()) {
            changed += ((a.to_bits() ^ b.to_bits()) & mask).count_ones() as u64;
        }
        let total = values.len() as u64 * n as u64;
        let fraction = changed as f64 / total as f64;
        assert!(
            (0.49..=0.51).contains(&fraction),
            "changed fraction {fraction} over {total} bits"
        );
    }

    #[test]
    fn ulp_examples() {
        assert_eq!(ulp(1.0), (2.0f64).powi(-23));
        assert_eq!(ulp(-2.0), (2.0f64).powi(-22));
        assert_eq!(ulp(f32::MIN_POSITIVE / 4.0), (2.0f64).powi(-149));
    }

    #[test]
    fn plan_validation() {
        assert!(BitPlan::fill(33, 0).is_err());
        assert!(BitPlan::fill(32, 0).is_ok());
        let store = store_of(&[1.0]);
        let fill_plan = BitPlan::fill(3, 0).unwrap();
        assert!(matches!(
            embed_message(&store, &Selector::All, &fill_plan, b""),
            Err(CodecError::WrongMode { .. })
        ));
        assert!(matches!(
            extract_message(&store, &Selector::All, 0),
            Err(CodecError::InvalidBitCount(0))
        ));
    }
}
