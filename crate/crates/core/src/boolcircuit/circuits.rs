use rayon::prelude::*;

use super::{width_for, BitBackend, CircuitError, EncBitVector, EncUInt};

/// Widest integer the comparator accepts.
pub const MAX_UINT_WIDTH: usize = 64;

fn check_backend<B: BitBackend>(backend: &B, id: super::BackendId) -> Result<(), CircuitError> {
    if backend.id() != id {
        return Err(CircuitError::BackendMismatch);
    }
    Ok(())
}

/// Maps over `items`, through rayon when the backend asks for it.
fn map_items<B, T, U, F>(backend: &B, items: Vec<T>, f: F) -> Vec<U>
where
    B: BitBackend,
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    if backend.parallel_gates() {
        items.into_par_iter().map(f).collect()
    } else {
        items.into_iter().map(f).collect()
    }
}

/// Elementwise XOR: exactly `len` XOR gates.
pub fn xor_array<B: BitBackend>(
    backend: &B,
    a: &EncBitVector<B::Bit>,
    b: &EncBitVector<B::Bit>,
) -> Result<EncBitVector<B::Bit>, CircuitError> {
    check_backend(backend, a.backend())?;
    check_backend(backend, b.backend())?;
    if a.len() != b.len() {
        return Err(CircuitError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let pairs: Vec<_> = a.bits().iter().zip(b.bits()).collect();
    let bits = map_items(backend, pairs, |(x, y)| backend.xor(x, y));
    Ok(EncBitVector::new(backend.id(), bits))
}

/// A partial sum inside the adder tree together with its largest possible value.
struct Partial<T> {
    bits: Vec<T>,
    max: u64,
}

fn half_adder<B: BitBackend>(backend: &B, a: &B::Bit, b: &B::Bit) -> (B::Bit, B::Bit) {
    (backend.xor(a, b), backend.and(a, b))
}

fn full_adder<B: BitBackend>(backend: &B, a: &B::Bit, b: &B::Bit, c: &B::Bit) -> (B::Bit, B::Bit) {
    let t = backend.xor(a, b);
    let sum = backend.xor(&t, c);
    let carry = backend.or(&backend.and(a, b), &backend.and(c, &t));
    (sum, carry)
}

/// Ripple-carry addition. The result is exactly as wide as its maximum value
/// needs; a final carry beyond that width is provably zero and dropped.
fn add<B: BitBackend>(backend: &B, x: Partial<B::Bit>, y: Partial<B::Bit>) -> Partial<B::Bit> {
    let max = x.max + y.max;
    let width = width_for(max);
    let mut out = Vec::with_capacity(width);
    let mut carry: Option<B::Bit> = None;
    for i in 0..x.bits.len().max(y.bits.len()) {
        let (a, b) = (x.bits.get(i), y.bits.get(i));
        let (sum, next) = match (a, b, carry.as_ref()) {
            (Some(a), Some(b), None) => {
                let (s, c) = half_adder(backend, a, b);
                (s, Some(c))
            }
            (Some(a), Some(b), Some(c)) => {
                let (s, c) = full_adder(backend, a, b, c);
                (s, Some(c))
            }
            (Some(a), None, Some(c)) | (None, Some(a), Some(c)) => {
                let (s, c) = half_adder(backend, a, c);
                (s, Some(c))
            }
            (Some(a), None, None) | (None, Some(a), None) => (a.clone(), None),
            (None, None, _) => unreachable!(),
        };
        out.push(sum);
        carry = next;
    }
    if let Some(c) = carry {
        if out.len() < width {
            out.push(c);
        }
    }
    out.truncate(width);
    Partial { bits: out, max }
}

/// Adder-tree reduction of single bits into a little-endian count.
///
/// The first layer compresses bit triples with full adders (two-bit sums); the
/// following layers add neighbouring partial sums pairwise, each one bit wider
/// than the last. An unpaired element is promoted unchanged to the next layer.
fn count_bits<B: BitBackend>(backend: &B, bits: &[B::Bit]) -> (Vec<B::Bit>, usize) {
    debug_assert!(!bits.is_empty());
    if bits.len() == 1 {
        return (bits.to_vec(), 0);
    }
    let groups: Vec<&[B::Bit]> = bits.chunks(3).collect();
    let mut layer: Vec<Partial<B::Bit>> = map_items(backend, groups, |g| match g {
        [a, b, c] => {
            let (s, carry) = full_adder(backend, a, b, c);
            Partial {
                bits: vec![s, carry],
                max: 3,
            }
        }
        [a, b] => {
            let (s, carry) = half_adder(backend, a, b);
            Partial {
                bits: vec![s, carry],
                max: 2,
            }
        }
        [a] => Partial {
            bits: vec![a.clone()],
            max: 1,
        },
        _ => unreachable!(),
    });
    let mut layers = 1;
    while layer.len() > 1 {
        layers += 1;
        let mut pairs = Vec::with_capacity(layer.len().div_ceil(2));
        let mut iter = layer.into_iter();
        while let Some(x) = iter.next() {
            pairs.push((x, iter.next()));
        }
        layer = map_items(backend, pairs, |(x, y)| match y {
            Some(y) => add(backend, x, y),
            None => x,
        });
    }
    (layer.pop().unwrap().bits, layers)
}

/// Number of addition layers [`popcount_tree`] uses for `len` input bits.
pub fn popcount_layers(len: usize) -> usize {
    if len <= 1 {
        return 0;
    }
    let leaves = len.div_ceil(3);
    1 + width_for(leaves as u64 - 1)
}

/// Encrypted count of set bits. For 96 inputs: 6 layers, 7-bit result.
pub fn popcount_tree<B: BitBackend>(
    backend: &B,
    v: &EncBitVector<B::Bit>,
) -> Result<EncUInt<B::Bit>, CircuitError> {
    check_backend(backend, v.backend())?;
    if v.is_empty() {
        return Err(CircuitError::EmptyVector);
    }
    Ok(EncUInt::new(backend.id(), count_bits(backend, v.bits()).0))
}

/// Encrypted `count <= threshold` via a borrow chain over `threshold - count`.
///
/// The narrower operand is zero-extended.
pub fn leq_const_threshold<B: BitBackend>(
    backend: &B,
    count: &EncUInt<B::Bit>,
    threshold: &EncUInt<B::Bit>,
) -> Result<B::Bit, CircuitError> {
    check_backend(backend, count.backend())?;
    check_backend(backend, threshold.backend())?;
    let width = count.width().max(threshold.width());
    if width > MAX_UINT_WIDTH {
        return Err(CircuitError::WidthOverflow {
            width,
            max: MAX_UINT_WIDTH,
        });
    }
    let zero = backend.constant(false);
    let mut borrow: Option<B::Bit> = None;
    for i in 0..width {
        let c = count.bits().get(i).unwrap_or(&zero);
        let t = threshold.bits().get(i).unwrap_or(&zero);
        borrow = Some(match borrow {
            // borrow out of t_0 - c_0
            None => backend.and(&backend.not(t), c),
            // majority(!t, c, borrow)
            Some(b) => {
                let nt_b = backend.not(&backend.xor(t, &b));
                let c_b = backend.xor(c, &b);
                backend.xor(&b, &backend.and(&nt_b, &c_b))
            }
        });
    }
    Ok(match borrow {
        Some(b) => backend.not(&b),
        None => backend.constant(true),
    })
}

/// Depth of [`or_tree`] over `n` leaves: `ceil(log2 n)`.
pub fn or_tree_depth(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        width_for(n as u64 - 1)
    }
}

/// Balanced OR reduction.
pub fn or_tree<B: BitBackend>(backend: &B, bits: &[B::Bit]) -> Result<B::Bit, CircuitError> {
    if bits.is_empty() {
        return Err(CircuitError::EmptyInput);
    }
    let mut layer = bits.to_vec();
    while layer.len() > 1 {
        let mut pairs = Vec::with_capacity(layer.len().div_ceil(2));
        let mut iter = layer.into_iter();
        while let Some(x) = iter.next() {
            pairs.push((x, iter.next()));
        }
        layer = map_items(backend, pairs, |(x, y)| match y {
            Some(y) => backend.or(&x, &y),
            None => x,
        });
    }
    Ok(layer.pop().unwrap())
}

/// Encrypted number of set bits among `bits`, `ceil(log2(n + 1))` bits wide.
pub fn sum_tree<B: BitBackend>(
    backend: &B,
    bits: &[B::Bit],
) -> Result<EncUInt<B::Bit>, CircuitError> {
    if bits.is_empty() {
        return Err(CircuitError::EmptyInput);
    }
    Ok(EncUInt::new(backend.id(), count_bits(backend, bits).0))
}

/// Encrypted `hamming(query, entry) <= threshold`.
pub fn match_circuit<B: BitBackend>(
    backend: &B,
    query: &EncBitVector<B::Bit>,
    entry: &EncBitVector<B::Bit>,
    threshold: &EncUInt<B::Bit>,
) -> Result<B::Bit, CircuitError> {
    let diff = xor_array(backend, query, entry)?;
    let distance = popcount_tree(backend, &diff)?;
    leq_const_threshold(backend, &distance, threshold)
}
