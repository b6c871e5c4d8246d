//! Arithmetic in GF(2^61 - 1) and Shamir helpers.

pub const MODULUS: u64 = (1 << 61) - 1;

pub fn reduce(x: u128) -> u64 {
    let lo = (x as u64) & MODULUS;
    let hi = (x >> 61) as u64;
    let mut r = lo + (hi & MODULUS) + ((x >> 122) as u64);
    while r >= MODULUS {
        r -= MODULUS;
    }
    r
}

pub fn add(a: u64, b: u64) -> u64 {
    let s = a + b;
    if s >= MODULUS {
        s - MODULUS
    } else {
        s
    }
}

pub fn sub(a: u64, b: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        a + MODULUS - b
    }
}

pub fn mul(a: u64, b: u64) -> u64 {
    reduce(a as u128 * b as u128)
}

pub fn pow(mut base: u64, mut exp: u64) -> u64 {
    let mut acc = 1;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul(acc, base);
        }
        base = mul(base, base);
        exp >>= 1;
    }
    acc
}

pub fn inv(a: u64) -> u64 {
    debug_assert!(a != 0);
    pow(a, MODULUS - 2)
}

/// Uniform field element from 64 random bits (rejection sampling).
pub fn sample<R: rand::Rng + ?Sized>(rng: &mut R) -> u64 {
    loop {
        let v = rng.gen::<u64>() & MODULUS;
        if v < MODULUS {
            return v;
        }
    }
}

/// Horner evaluation; `coeffs[0]` is the constant term.
pub fn eval_poly(coeffs: &[u64], x: u64) -> u64 {
    coeffs.iter().rev().fold(0, |acc, &c| add(mul(acc, x), c))
}

/// Lagrange coefficients for interpolating at zero from distinct nonzero points.
pub fn lagrange_at_zero(xs: &[u64]) -> Vec<u64> {
    xs.iter()
        .enumerate()
        .map(|(i, &xi)| {
            let (num, den) = xs
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .fold((1, 1), |(num, den), (_, &xj)| {
                    (mul(num, xj), mul(den, sub(xj, xi)))
                });
            mul(num, inv(den))
        })
        .collect()
}

/// Nonzero public multiplier derived from a ciphertext nonce.
pub fn nonce_point(nonce: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = nonce.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    1 + z % (MODULUS - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn arithmetic_identities() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let a = sample(&mut rng);
            let b = sample(&mut rng);
            assert_eq!(sub(add(a, b), b), a);
            if a != 0 {
                assert_eq!(mul(a, inv(a)), 1);
            }
            assert_eq!(
                mul(a, b),
                ((a as u128 * b as u128) % MODULUS as u128) as u64
            );
        }
        assert_eq!(reduce(u128::MAX), (u128::MAX % MODULUS as u128) as u64);
    }

    #[test]
    fn shamir_reconstruction() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let coeffs: Vec<u64> = (0..3).map(|_| sample(&mut rng)).collect();
        let xs = [2u64, 5, 7];
        let ys: Vec<u64> = xs.iter().map(|&x| eval_poly(&coeffs, x)).collect();
        let secret = lagrange_at_zero(&xs)
            .iter()
            .zip(&ys)
            .fold(0, |acc, (l, y)| add(acc, mul(*l, *y)));
        assert_eq!(secret, coeffs[0]);
    }
}
