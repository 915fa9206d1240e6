//! Dense matrix exponential by scaling and squaring with Pade approximants.
//!
//! Algorithm from Higham, "The Scaling and Squaring Method for the Matrix
//! Exponential Revisited", with the usual degree-3/5/7/9/13 ladder.

use nalgebra::DMatrix;

type M = DMatrix<f64>;

pub fn expm(a: &M) -> M {
    assert_eq!(a.nrows(), a.ncols(), "expm needs a square matrix");
    let l1 = l1_norm(a);
    let (u, v, squarings) = if l1 < 1.495_585_217_958_292e-2 {
        let (u, v) = pade3(a);
        (u, v, 0)
    } else if l1 < 2.539_398_330_063_23e-1 {
        let (u, v) = pade5(a);
        (u, v, 0)
    } else if l1 < 9.504_178_996_162_932e-1 {
        let (u, v) = pade7(a);
        (u, v, 0)
    } else if l1 < 2.097_847_961_257_068 {
        let (u, v) = pade9(a);
        (u, v, 0)
    } else {
        const MAX_NORM: f64 = 5.371_920_351_148_152;
        let squarings = ((l1 / MAX_NORM).log2().ceil() as i32).max(0);
        let scaled = a.map(|x| x * 2f64.powi(-squarings));
        let (u, v) = pade13(&scaled);
        (u, v, squarings)
    };
    let numer = &u + &v;
    let denom = &v - &u;
    let mut result = denom
        .lu()
        .solve(&numer)
        .expect("Pade denominator is singular");
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

fn l1_norm(a: &M) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn pade3(a: &M) -> (M, M) {
    const B: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
    let id = M::identity(a.nrows(), a.ncols());
    let a2 = a * a;
    let u = a * (&a2 * B[3] + &id * B[1]);
    let v = a2 * B[2] + id * B[0];
    (u, v)
}

fn pade5(a: &M) -> (M, M) {
    const B: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
    let id = M::identity(a.nrows(), a.ncols());
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let u = a * (&a4 * B[5] + &a2 * B[3] + &id * B[1]);
    let v = a4 * B[4] + a2 * B[2] + id * B[0];
    (u, v)
}

fn pade7(a: &M) -> (M, M) {
    const B: [f64; 8] = [
        17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
    ];
    let id = M::identity(a.nrows(), a.ncols());
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u = a * (&a6 * B[7] + &a4 * B[5] + &a2 * B[3] + &id * B[1]);
    let v = a6 * B[6] + a4 * B[4] + a2 * B[2] + id * B[0];
    (u, v)
}

fn pade9(a: &M) -> (M, M) {
    const B: [f64; 10] = [
        17643225600.0,
        8821612800.0,
        2075673600.0,
        302702400.0,
        30270240.0,
        2162160.0,
        110880.0,
        3960.0,
        90.0,
        1.0,
    ];
    let id = M::identity(a.nrows(), a.ncols());
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let a8 = &a6 * &a2;
    let u = a * (&a8 * B[9] + &a6 * B[7] + &a4 * B[5] + &a2 * B[3] + &id * B[1]);
    let v = a8 * B[8] + a6 * B[6] + a4 * B[4] + a2 * B[2] + id * B[0];
    (u, v)
}

fn pade13(a: &M) -> (M, M) {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let id = M::identity(a.nrows(), a.ncols());
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let w = &a6 * B[13] + &a4 * B[11] + &a2 * B[9];
    let u = a * (&a6 * w + &a6 * B[7] + &a4 * B[5] + &a2 * B[3] + &id * B[1]);
    let w2 = &a6 * B[12] + &a4 * B[10] + &a2 * B[8];
    let v = &a6 * w2 + a6 * B[6] + a4 * B[4] + a2 * B[2] + id * B[0];
    (u, v)
}
