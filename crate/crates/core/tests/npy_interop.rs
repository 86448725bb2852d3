//! NPY files written here, read back by `ndarray-npy`.

use ndarray::{Array1, Array2, Array3, ArrayD};
use ndarray_npy::{ReadNpyExt, WriteNpyExt};
use proptest::prelude::*;

use sensorpipe::dataset::{export_npy, make_windows, WindowSpec};
use sensorpipe::npy::{parse_npy, write_npy, NpyArray};
use sensorpipe::synthgen::{generate_session, SessionConfig};

fn ours<T: sensorpipe::npy::Element>(a: &NpyArray<T>) -> Vec<u8> {
    let mut out = Vec::new();
    write_npy(a, &mut out).unwrap();
    out
}

proptest! {
    #[test]
    fn f32_matrices_read_back_bit_exact(rows in 0usize..6, cols in 0usize..40, seed in any::<u32>()) {
        let data: Vec<f32> = (0..rows * cols).map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 7919))).collect();
        let bytes = ours(&NpyArray::new(vec![rows, cols], data.clone()).unwrap());
        let back = Array2::<f32>::read_npy(&bytes[..]).unwrap();
        prop_assert_eq!(back.dim(), (rows, cols));
        let a: Vec<u32> = back.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = data.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn payload_matches_ndarray_npy(rows in 1usize..5, cols in 1usize..30) {
        let data: Vec<f64> = (0..rows * cols).map(|i| i as f64 * 0.37 - 3.0).collect();
        let bytes = ours(&NpyArray::new(vec![rows, cols], data.clone()).unwrap());
        let mut reference = Vec::new();
        Array2::from_shape_vec((rows, cols), data).unwrap().write_npy(&mut reference).unwrap();
        // Headers differ only in NumPy's trailing ", " before the closing brace.
        prop_assert_eq!((bytes.len() - 8 * rows * cols) % 64, 0);
        prop_assert_eq!(&bytes[bytes.len() - 8 * rows * cols..], &reference[reference.len() - 8 * rows * cols..]);
    }
}

/// Bytes of `np.save(f, np.arange(3, dtype='<i8'))` from NumPy.
#[test]
fn header_matches_numpy() {
    let mut expected = b"\x93NUMPY\x01\x00v\x00{'descr': '<i8', 'fortran_order': False, 'shape': (3,), }".to_vec();
    expected.resize(127, b' ');
    expected.push(b'\n');
    for v in 0i64..3 {
        expected.extend_from_slice(&v.to_le_bytes());
    }
    assert_eq!(ours(&NpyArray::new(vec![3], vec![0i64, 1, 2]).unwrap()), expected);
}

#[test]
fn integer_and_higher_rank_arrays() {
    let ints = NpyArray::new(vec![3], vec![-1i64, 0, i64::MAX]).unwrap();
    let back = Array1::<i64>::read_npy(&ours(&ints)[..]).unwrap();
    assert_eq!(back.to_vec(), vec![-1, 0, i64::MAX]);

    let cube = NpyArray::new(vec![2, 3, 4], (0..24).map(|v| v as f32).collect()).unwrap();
    let back = Array3::<f32>::read_npy(&ours(&cube)[..]).unwrap();
    assert_eq!(back[[1, 2, 3]], 23.0);
    assert_eq!(back[[1, 0, 2]], 14.0);

    let scalar_like = NpyArray::new(vec![0, 5], Vec::<f64>::new()).unwrap();
    let back = ArrayD::<f64>::read_npy(&ours(&scalar_like)[..]).unwrap();
    assert_eq!(back.shape(), &[0, 5]);
}

#[test]
fn reads_files_written_by_ndarray_npy() {
    let a = Array2::from_shape_fn((3, 7), |(i, j)| (i * 10 + j) as f32);
    let mut bytes = Vec::new();
    a.write_npy(&mut bytes).unwrap();
    let back: NpyArray<f32> = parse_npy(&bytes).unwrap();
    assert_eq!(back.shape, vec![3, 7]);
    assert_eq!(back.data, a.iter().copied().collect::<Vec<_>>());
}

#[test]
fn pipeline_arrays_parse_under_ndarray_npy() {
    let (logs, truth) = generate_session(&SessionConfig::pendulum()).unwrap();
    let matrix = sensorpipe::syncer::synchronize(&logs).unwrap();

    let mut aligned = Vec::new();
    export_npy(&matrix.data, false, &mut aligned).unwrap();
    let back = Array2::<f32>::read_npy(&aligned[..]).unwrap();
    assert_eq!(back.dim(), (2, matrix.n_timesteps()));
    assert!(back.row(1).iter().zip(&matrix.data[1]).all(|(a, b)| a.to_bits() == b.to_bits()));

    let ds = make_windows(&matrix.data, &WindowSpec::default()).unwrap();
    let inputs = Array3::<f32>::read_npy(&ours(&ds.inputs_npy())[..]).unwrap();
    assert_eq!(inputs.dim(), (ds.n_pairs, 32, 2));
    assert_eq!(inputs[[3, 5, 1]], ds.input(3)[5 * 2 + 1]);
    let targets = Array2::<f32>::read_npy(&ours(&ds.targets_npy())[..]).unwrap();
    assert_eq!(targets.dim(), (ds.n_pairs, 96));
    let stats = Array2::<f64>::read_npy(&ours(&ds.stats_npy())[..]).unwrap();
    assert_eq!(stats.dim(), (3, 2));
    assert_eq!(stats[[2, 1]], ds.target_stats.std);

    let gt = Array2::<i64>::read_npy(&ours(&truth.to_npy())[..]).unwrap();
    assert_eq!(gt.dim(), (2, truth.n_pulses()));
    assert_eq!(gt[[1, 0]], 237);
}
