use lbccn::dsp::{BinauralWaveform, PIPELINE_SAMPLE_RATE};
use lbccn::model::{enhance_streaming, LbccnConfig, LbccnModel, PredictorVariant, StreamState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise_wave(len: usize, seed: u64) -> BinauralWaveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ch = || (0..len).map(|_| rng.gen_range(-0.3f32..0.3)).collect::<Vec<_>>();
    let left = ch();
    let right = ch();
    BinauralWaveform::new(left, right, PIPELINE_SAMPLE_RATE).unwrap()
}

#[test]
fn default_model_has_expected_size() {
    let m = LbccnModel::build(LbccnConfig::default(), 0).unwrap();
    let n = m.real_param_count();
    assert!((19_000..=76_000).contains(&n), "{n}");
}

#[test]
fn streaming_matches_offline_for_every_variant() {
    let wave = noise_wave(16_000, 1);
    for v in PredictorVariant::ALL {
        let m = LbccnModel::build(LbccnConfig::default().with_variant(v), 3).unwrap();
        let offline = m.enhance(&wave).unwrap();
        let online = enhance_streaming(&m, &wave).unwrap();
        assert_eq!(offline.len(), wave.len());
        assert_eq!(online.len(), wave.len());
        let diff = offline
            .left
            .iter()
            .chain(&offline.right)
            .zip(online.left.iter().chain(&online.right))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(diff <= 1e-6, "{v}: {diff}");
    }
}

#[test]
fn enhancement_is_causal() {
    let m = LbccnModel::build(LbccnConfig::default(), 4).unwrap();
    let a = noise_wave(8_000, 5);
    let mut b = a.clone();
    let cut = 5_000;
    for v in b.left[cut..].iter_mut().chain(b.right[cut..].iter_mut()) {
        *v = -*v * 2.0;
    }
    let (ya, yb) = (m.enhance(&a).unwrap(), m.enhance(&b).unwrap());
    // samples before the change are final once the frame holding them is complete
    let stable = cut - cut % 128 - 128;
    assert_eq!(ya.left[..stable], yb.left[..stable]);
    assert_eq!(ya.right[..stable], yb.right[..stable]);
}

#[test]
fn stream_rejects_wrong_hop_length() {
    let m = LbccnModel::build(LbccnConfig::toy(), 0).unwrap();
    let mut st = StreamState::new(&m).unwrap();
    let hop = st.hop();
    let (mut ol, mut or) = (vec![0.0; hop], vec![0.0; hop]);
    assert!(st
        .process(&vec![0.0; hop + 1], &vec![0.0; hop + 1], &mut ol, &mut or)
        .is_err());
    assert!(st.process(&vec![0.0; hop], &vec![0.0; hop], &mut ol, &mut or).is_ok());
}

#[test]
fn same_seed_builds_identical_models() {
    let a = LbccnModel::build(LbccnConfig::default(), 9).unwrap();
    let b = LbccnModel::build(LbccnConfig::default(), 9).unwrap();
    let c = LbccnModel::build(LbccnConfig::default(), 10).unwrap();
    assert_eq!(a.params().tensors(), b.params().tensors());
    assert_ne!(a.params().tensors(), c.params().tensors());
}
