use arrayssl::models::{
    count_params, transfer_encoder, BandwidthNet, InpaintNet, Layer, Model, SqueezeExcite, HEAD_CHANNELS,
};
use arrayssl::tensor::optim::Adam;
use arrayssl::tensor::{init, mse, NormMode, Tensor};
use arrayssl::training::{bandwidth_loss, Checkpoint};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn randn(shape: &[usize], seed: u64) -> Tensor {
    init::normal(&mut ChaCha8Rng::seed_from_u64(seed), shape, 1.0)
}

#[test]
fn desk_shape_latent_and_recon() {
    let net = InpaintNet::new(8, 0);
    let x = randn(&[2, 8, 8, 512], 1);
    let (latent, recon) = net.forward_parts(&x).unwrap();
    assert_eq!(latent.shape(), [2, 32, 1, 512]);
    assert_eq!(recon.shape(), [2, 8, 8, 512]);
}

#[test]
fn latent_is_half_the_input_whenever_time_is_a_multiple_of_eight() {
    let net = InpaintNet::new(8, 0);
    for (t, f) in [(8, 16), (16, 8), (32, 32)] {
        let (latent, recon) = net.forward_parts(&randn(&[1, 8, t, f], 2)).unwrap();
        assert_eq!(latent.shape(), [1, 32, t / 8, f]);
        assert_eq!(recon.shape(), [1, 8, t, f]);
        assert_eq!(2 * latent.len(), 8 * t * f);
    }
}

#[test]
fn bandwidth_head_trace_and_positivity() {
    assert_eq!(HEAD_CHANNELS, [32, 16, 8, 4, 2, 1]);
    let net = BandwidthNet::new(8, 32, 1, 2).unwrap();
    assert_eq!(net.head.len(), 5);
    for (b, w) in net.head.iter().zip(HEAD_CHANNELS.windows(2)) {
        assert_eq!((b.main.in_channels(), b.main.out_channels()), (w[0], w[1]));
        assert_eq!(b.main.weight.shape()[2], 5);
        assert_eq!(b.skip.weight.shape()[2], 1);
    }
    let y = net.forward(&randn(&[3, 8, 32, 24], 3)).unwrap();
    assert_eq!(y.shape(), [3, 24]);
    assert!(y.data().iter().all(|&v| v > 0.0));
}

#[test]
fn freeze_keeps_encoder_for_ten_steps() {
    let src = InpaintNet::new(8, 4);
    let mut dst = BandwidthNet::new(8, 8, 5, 6).unwrap();
    transfer_encoder(&src, &mut dst, true).unwrap();
    let before: Vec<Vec<f32>> = encoder_values(&dst);
    let decoder_before: Vec<Vec<f32>> = dst.decoder_tensors().iter().map(|(_, t)| t.to_vec()).collect();
    let mut opt = Adam::new(dst.trainable(), 0.01);
    dst.set_mode(NormMode::Train);
    let x = randn(&[2, 8, 8, 16], 7);
    let target = Tensor::new((0..32).map(|i| if i % 4 == 1 { 0.25 } else { 0.0 }).collect(), &[2, 16]).unwrap();
    for _ in 0..10 {
        opt.zero_grad();
        bandwidth_loss(&target, &dst.forward(&x).unwrap(), 1e-6).unwrap().backward().unwrap();
        opt.step().unwrap();
    }
    assert_eq!(before, encoder_values(&dst));
    let decoder_after: Vec<Vec<f32>> = dst.decoder_tensors().iter().map(|(_, t)| t.to_vec()).collect();
    assert_ne!(decoder_before, decoder_after);
}

fn encoder_values(net: &BandwidthNet) -> Vec<Vec<f32>> {
    let mut v = Vec::new();
    net.encoder.tensors("", &mut v);
    v.into_iter().map(|(_, t)| t.to_vec()).collect()
}

#[test]
fn unfrozen_encoder_moves_after_one_step() {
    let src = InpaintNet::new(8, 4);
    let mut dst = BandwidthNet::new(8, 8, 5, 6).unwrap();
    transfer_encoder(&src, &mut dst, false).unwrap();
    let before = dst.encoder.stem.weight.to_vec();
    let mut opt = Adam::new(dst.trainable(), 0.01);
    dst.set_mode(NormMode::Train);
    let target = Tensor::new(vec![0.0, 0.5, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0], &[1, 8]).unwrap();
    opt.zero_grad();
    bandwidth_loss(&target, &dst.forward(&randn(&[1, 8, 8, 8], 9)).unwrap(), 1e-6)
        .unwrap()
        .backward()
        .unwrap();
    assert!(dst.encoder.stem.weight.grad().unwrap().iter().any(|&g| g != 0.0));
    opt.step().unwrap();
    assert_ne!(before, dst.encoder.stem.weight.to_vec());
}

#[test]
fn transferred_encoder_is_bit_identical_via_checkpoint() {
    let src = InpaintNet::new(8, 10);
    let x = randn(&[2, 8, 8, 16], 11);
    // A train-mode pass moves the running statistics away from their defaults.
    src.forward(&x).unwrap();
    let bytes = Checkpoint::from_model(&src).encode().unwrap();
    let loaded = Checkpoint::decode(&bytes, std::path::Path::new("mem")).unwrap();
    let mut restored = InpaintNet::new(8, 99);
    loaded.apply_to(&restored).unwrap();
    let mut dst = BandwidthNet::new(8, 32, 1, 1).unwrap();
    transfer_encoder(&restored, &mut dst, false).unwrap();
    let mut src = src;
    src.set_mode(NormMode::Eval);
    restored.set_mode(NormMode::Eval);
    dst.set_mode(NormMode::Eval);
    let a = src.encoder.forward(&x).unwrap().to_vec();
    let b = dst.encoder.forward(&x).unwrap().to_vec();
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(loaded.manifest(), src.manifest());
}

#[test]
fn squeeze_excite_commutes_with_channel_permutation() {
    let c = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let se = SqueezeExcite::new(&mut rng, c);
    let h = se.w1.shape()[0];
    let x = randn(&[2, c, 3, 5], 13);
    let perm: Vec<usize> = (0..c).map(|i| (i * 5 + 3) % c).collect();
    let plane = 15;

    let permute_planes = |v: &[f32], n: usize| -> Vec<f32> {
        let mut out = vec![0.0; v.len()];
        for b in 0..n {
            for (new, &old) in perm.iter().enumerate() {
                let (dst, src) = ((b * c + new) * plane, (b * c + old) * plane);
                out[dst..dst + plane].copy_from_slice(&v[src..src + plane]);
            }
        }
        out
    };
    let w1 = se.w1.to_vec();
    let w1p: Vec<f32> = (0..h).flat_map(|j| perm.iter().map(|&old| w1[j * c + old]).collect::<Vec<_>>()).collect();
    let w2 = se.w2.to_vec();
    let w2p: Vec<f32> = perm.iter().flat_map(|&old| w2[old * h..(old + 1) * h].to_vec()).collect();
    let b2 = se.b2.to_vec();
    let b2p: Vec<f32> = perm.iter().map(|&old| b2[old]).collect();
    let sep = SqueezeExcite {
        w1: Tensor::new(w1p, &[h, c]).unwrap(),
        b1: se.b1.clone(),
        w2: Tensor::new(w2p, &[c, h]).unwrap(),
        b2: Tensor::new(b2p, &[c]).unwrap(),
    };
    let xp = Tensor::new(permute_planes(&x.to_vec(), 2), &[2, c, 3, 5]).unwrap();
    let y = se.forward(&x).unwrap().to_vec();
    let yp = sep.forward(&xp).unwrap().to_vec();
    let expect = permute_planes(&y, 2);
    for (a, b) in yp.iter().zip(&expect) {
        assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn small_adam_step_decreases_inpainting_loss() {
    let net = InpaintNet::new(8, 14);
    let x = randn(&[2, 8, 8, 32], 15);
    let target = randn(&[2, 8, 8, 32], 16);
    let loss = |n: &InpaintNet| mse(&n.forward(&x).unwrap(), &target).unwrap();
    let mut opt = Adam::new(net.trainable(), 1e-5);
    let l0 = loss(&net);
    l0.backward().unwrap();
    opt.step().unwrap();
    let l1 = loss(&net).item();
    assert!(l1 < l0.item(), "{} -> {l1}", l0.item());
}

#[test]
fn parameter_count_is_stable() {
    let net = InpaintNet::new(8, 0);
    let n = count_params(&net);
    assert_eq!(n, count_params(&InpaintNet::new(8, 1)));
    assert_eq!(n, net.trainable().iter().map(Tensor::len).sum::<usize>());
}
