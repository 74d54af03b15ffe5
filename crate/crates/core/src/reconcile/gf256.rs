//! Arithmetic in GF(2^8) modulo x^8 + x^4 + x^3 + x^2 + 1 (0x11D), generator 2.

use std::sync::OnceLock;

pub const PRIMITIVE_POLY: u16 = 0x11D;

struct Tables {
    exp: [u8; 512],
    log: [u8; 256],
}

fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let mut exp = [0u8; 512];
        let mut log = [0u8; 256];
        let mut x: u16 = 1;
        for i in 0..255 {
            exp[i] = x as u8;
            log[x as usize] = i as u8;
            x <<= 1;
            if x & 0x100 != 0 {
                x ^= PRIMITIVE_POLY;
            }
        }
        for i in 255..512 {
            exp[i] = exp[i - 255];
        }
        Tables { exp, log }
    })
}

pub fn mul(a: u8, b: u8) -> u8 {
    if a == 0 || b == 0 {
        return 0;
    }
    let t = tables();
    t.exp[t.log[a as usize] as usize + t.log[b as usize] as usize]
}

pub fn div(a: u8, b: u8) -> u8 {
    assert!(b != 0, "division by zero in GF(256)");
    if a == 0 {
        return 0;
    }
    let t = tables();
    t.exp[(t.log[a as usize] as usize + 255 - t.log[b as usize] as usize) % 255]
}

pub fn inv(a: u8) -> u8 {
    div(1, a)
}

/// `2^e`.
pub fn alpha_pow(e: usize) -> u8 {
    tables().exp[e % 255]
}

pub fn log(a: u8) -> usize {
    assert!(a != 0, "log of zero in GF(256)");
    tables().log[a as usize] as usize
}

/// Polynomials are coefficient vectors, highest degree first.
pub fn poly_eval(p: &[u8], x: u8) -> u8 {
    p.iter().fold(0, |acc, &c| mul(acc, x) ^ c)
}

pub fn poly_mul(p: &[u8], q: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; p.len() + q.len() - 1];
    for (i, &a) in p.iter().enumerate() {
        for (j, &b) in q.iter().enumerate() {
            out[i + j] ^= mul(a, b);
        }
    }
    out
}

pub fn poly_scale(p: &[u8], s: u8) -> Vec<u8> {
    p.iter().map(|&c| mul(c, s)).collect()
}

pub fn poly_add(p: &[u8], q: &[u8]) -> Vec<u8> {
    let n = p.len().max(q.len());
    let mut out = vec![0u8; n];
    for (i, &c) in p.iter().enumerate() {
        out[i + n - p.len()] = c;
    }
    for (i, &c) in q.iter().enumerate() {
        out[i + n - q.len()] ^= c;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Carry-less multiply then reduce, bit by bit.
    fn slow_mul(a: u8, b: u8) -> u8 {
        let mut acc: u16 = 0;
        for i in 0..8 {
            if b & (1 << i) != 0 {
                acc ^= (a as u16) << i;
            }
        }
        for bit in (8..16).rev() {
            if acc & (1 << bit) != 0 {
                acc ^= PRIMITIVE_POLY << (bit - 8);
            }
        }
        acc as u8
    }

    #[test]
    fn table_multiply_matches_bitwise() {
        for a in 0..=255u8 {
            for b in 0..=255u8 {
                assert_eq!(mul(a, b), slow_mul(a, b));
            }
        }
    }

    #[test]
    fn two_generates_the_group() {
        let mut seen = [false; 256];
        for e in 0..255 {
            let v = alpha_pow(e);
            assert!(!seen[v as usize]);
            seen[v as usize] = true;
        }
        assert!(!seen[0]);
    }

    #[test]
    fn inverses() {
        for a in 1..=255u8 {
            assert_eq!(mul(a, inv(a)), 1);
        }
    }

    #[test]
    fn poly_eval_horner() {
        // x^2 + 3 at x = 2: 4 ^ 3
        assert_eq!(poly_eval(&[1, 0, 3], 2), 7);
        assert_eq!(poly_add(&[1, 2], &[5, 1, 1]), vec![5, 0, 3]);
    }
}
