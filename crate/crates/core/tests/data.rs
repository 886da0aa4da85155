use std::fs;

use deepfea_core::config::{Profile, RunConfig};
use deepfea_core::fem::{run_simulation, MaterialLEM, SimOptions, SimulationRecord};
use deepfea_core::mesh::{build_input_tensor, grid_topology, Face, LoadSpec, NormalizationStats};
use deepfea_core::metrics::{evaluate, Parameter};
use deepfea_core::predict::{NepConfig, NepModel};
use deepfea_core::store::{
    read_dataset, read_json, read_model, split, split_indices, write_dataset, write_json,
    write_model, ModelArchive,
};
use deepfea_core::surrogate::Surrogate;
use deepfea_core::Error;
use proptest::prelude::*;

fn small_set(count: usize, steps: usize) -> Vec<SimulationRecord> {
    let topo = grid_topology(&[9, 9], 0.125, Face::Bottom).unwrap();
    let free = topo.free_boundary_nodes();
    let opts = SimOptions {
        steps,
        ..SimOptions::default()
    };
    (0..count)
        .map(|i| {
            let load = LoadSpec::new(
                free[(5 * i) % free.len()],
                LoadSpec::ANGLES[i % 4],
                [5e5, 1e6, 2e6][i % 3],
            );
            run_simulation(&topo, &MaterialLEM::default(), &load, &opts).unwrap()
        })
        .collect()
}

fn bits(r: &SimulationRecord) -> Vec<u64> {
    r.frames
        .iter()
        .flat_map(|f| {
            std::iter::once(f.time)
                .chain(f.coords.iter().copied())
                .chain(f.displacements.iter().copied())
                .chain(f.stress.iter().copied())
                .chain(f.strain.iter().copied())
        })
        .map(f64::to_bits)
        .collect()
}

#[test]
fn dataset_roundtrip_is_bitwise() {
    let sims = small_set(3, 8);
    let dir = tempfile::tempdir().unwrap();
    let m = write_dataset(&sims, dir.path(), 42).unwrap();
    assert_eq!(m.sims.len(), 3);
    let (m2, back) = read_dataset(dir.path()).unwrap();
    assert_eq!(m, m2);
    for (a, b) in sims.iter().zip(&back) {
        assert_eq!(bits(a), bits(b));
        assert_eq!(a.topology, b.topology);
        assert_eq!(a.load, b.load);
        assert_eq!(a.material, b.material);
    }
    let len = fs::metadata(dir.path().join("sim_0001.bin")).unwrap().len();
    assert_eq!(len, m.sim_file_len());
    // 9 frames × (2·81 coords + 2·81 displacements + 64 + 64) values + 12 bytes framing
    assert_eq!(len, 8 * 9 * (324 + 128) + 12);
}

#[test]
fn corruption_is_detected_and_names_the_file() {
    let sims = small_set(2, 4);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&sims, dir.path(), 0).unwrap();
    let path = dir.path().join("sim_0001.bin");
    let orig = fs::read(&path).unwrap();

    fs::write(&path, &orig[..orig.len() - 9]).unwrap();
    match read_dataset(dir.path()) {
        Err(Error::CorruptDataset { file, .. }) => assert_eq!(file, path),
        other => panic!("expected corrupt-dataset error, got {other:?}"),
    }

    let mut flipped = orig.clone();
    flipped[100] ^= 0x10;
    fs::write(&path, &flipped).unwrap();
    let err = read_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, Error::CorruptDataset { .. }));
    assert!(err.to_string().contains("sim_0001.bin"), "{err}");

    fs::write(&path, &orig).unwrap();
    assert!(read_dataset(dir.path()).is_ok());
    fs::remove_file(&path).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::Io { .. })));
}

#[test]
fn model_archive_roundtrip_is_bitwise() {
    let sims = small_set(2, 4);
    let stats = NormalizationStats::fit(&sims).unwrap();
    let model = NepModel::init(
        NepConfig {
            node_dims: vec![9, 9],
            hidden: vec![3, 4],
            kernel: 3,
        },
        17,
    )
    .unwrap();
    let archive = ModelArchive {
        surrogate: Surrogate::new(model, stats).unwrap(),
        training: None,
        metrics: None,
    };
    let dir = tempfile::tempdir().unwrap();
    write_model(&archive, dir.path()).unwrap();
    let back = read_model(dir.path()).unwrap();
    assert_eq!(back, archive);
    let bin = fs::metadata(dir.path().join("model.bin")).unwrap().len();
    assert_eq!(
        bin,
        8 * archive.surrogate.model.num_parameters() as u64 + 12
    );

    let first = fs::read(dir.path().join("model.json")).unwrap();
    write_model(&back, dir.path()).unwrap();
    assert_eq!(fs::read(dir.path().join("model.json")).unwrap(), first);

    let mut raw = fs::read(dir.path().join("model.bin")).unwrap();
    raw.truncate(raw.len() - 8);
    fs::write(dir.path().join("model.bin"), raw).unwrap();
    assert!(matches!(
        read_model(dir.path()),
        Err(Error::CorruptDataset { .. })
    ));
}

proptest! {
    /// Normalization ranges live in JSON; they must come back bit for bit.
    #[test]
    fn json_floats_roundtrip_exactly(bits in prop::collection::vec(any::<u64>(), 1..64)) {
        let values: Vec<f64> = bits.iter().map(|&b| f64::from_bits(b)).filter(|v| v.is_finite()).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.json");
        write_json(&path, &values).unwrap();
        let back: Vec<f64> = read_json(&path).unwrap();
        prop_assert_eq!(
            back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn generated_desk_manifest_lists_96_sims() {
    let mut cfg = RunConfig::profile(Profile::Desk);
    cfg.sim.steps = 2;
    let sims = cfg.generate(0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = write_dataset(&sims, dir.path(), 0).unwrap();
    assert_eq!(m.sims.len(), 96);
    let on_disk: deepfea_core::store::DatasetManifest =
        serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(on_disk.sims.len(), 96);
}

#[test]
fn split_examples() {
    let (a, b) = split_indices(10, 0.8, 3).unwrap();
    assert_eq!((a.len(), b.len()), (8, 2));
    assert_eq!(split_indices(10, 0.8, 3).unwrap(), (a, b));
    let (a, b) = split_indices(450, 0.8, 0).unwrap();
    assert_eq!((a.len(), b.len()), (360, 90));
    assert!(matches!(split_indices(1, 0.5, 0), Err(Error::Split(_))));
    assert!(matches!(split_indices(0, 0.5, 0), Err(Error::Split(_))));
}

proptest! {
    #[test]
    fn split_is_a_seeded_partition(n in 2usize..300, ratio in 0.05f64..0.95, seed in any::<u64>()) {
        let items: Vec<usize> = (0..n).collect();
        let (a, b) = split(&items, ratio, seed).unwrap();
        prop_assert_eq!(a.len() + b.len(), n);
        prop_assert!(!a.is_empty() && !b.is_empty());
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, items.clone());
        prop_assert_eq!(split(&items, ratio, seed).unwrap(), (a, b));
    }
}

#[test]
fn stats_match_a_brute_force_scan() {
    let sims = small_set(12, 10);
    let stats = NormalizationStats::fit(&sims).unwrap();
    let n = 81;
    let mut lo = [f64::MAX; 5];
    let mut hi = [f64::MIN; 5];
    let mut f_lo = 0.0f64;
    let mut f_hi = 0.0f64;
    for s in &sims {
        for (t, f) in s.frames.iter().enumerate() {
            for i in 0..n {
                lo[0] = lo[0].min(f.coords[i]);
                hi[0] = hi[0].max(f.coords[i]);
                lo[1] = lo[1].min(f.coords[n + i]);
                hi[1] = hi[1].max(f.coords[n + i]);
            }
            for e in 0..64 {
                lo[2] = lo[2].min(f.stress[e]);
                hi[2] = hi[2].max(f.stress[e]);
                lo[3] = lo[3].min(f.strain[e]);
                hi[3] = hi[3].max(f.strain[e]);
            }
            if t < s.steps() {
                let x = build_input_tensor(&f.coords, &s.load, &s.topology, t, s.steps()).unwrap();
                for v in &x.tensor.data()[2 * n..4 * n] {
                    f_lo = f_lo.min(*v);
                    f_hi = f_hi.max(*v);
                }
            }
        }
    }
    assert_eq!((stats.coords[0].min, stats.coords[0].max), (lo[0], hi[0]));
    assert_eq!((stats.coords[1].min, stats.coords[1].max), (lo[1], hi[1]));
    assert_eq!((stats.element[0].min, stats.element[0].max), (lo[2], hi[2]));
    assert_eq!((stats.element[1].min, stats.element[1].max), (lo[3], hi[3]));
    assert_eq!((stats.force.min, stats.force.max), (f_lo, f_hi));

    // the constraint channel passes through untouched
    let s = &sims[0];
    let x = build_input_tensor(&s.frames[0].coords, &s.load, &s.topology, 0, s.steps()).unwrap();
    let nx = stats.normalize_input(&x);
    assert_eq!(&nx.data()[4 * n..], &x.tensor.data()[4 * n..]);
    assert!(nx.data()[..4 * n].iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn input_tensor_layout() {
    let topo = grid_topology(&[9, 9], 0.125, Face::Bottom).unwrap();
    let load = LoadSpec::new(76, 0.0, 1e6);
    let coords = topo.rest_coordinates().to_vec();
    let x = build_input_tensor(&coords, &load, &topo, 49, 50).unwrap();
    assert_eq!(x.tensor.shape(), &[5, 9, 9]);
    let d = x.tensor.data();
    assert_eq!(d[2 * 81 + 76], 1e6);
    assert_eq!(d[3 * 81 + 76], 0.0);
    assert_eq!(d[2 * 81..4 * 81].iter().filter(|v| **v != 0.0).count(), 1);
    assert_eq!(d[4 * 81..4 * 81 + 9], [0.0; 9]);
    assert!(d[4 * 81 + 9..].iter().all(|&b| b == 1.0));
    assert_eq!(topo.free_boundary_nodes().len(), 23);
}

/// Evaluation may look only at frame 0 of each test simulation.
#[test]
fn rollout_ignores_every_frame_after_the_first() {
    let sims = small_set(4, 6);
    let stats = NormalizationStats::fit(&sims).unwrap();
    let model = NepModel::init(
        NepConfig {
            node_dims: vec![9, 9],
            hidden: vec![3],
            kernel: 3,
        },
        2,
    )
    .unwrap();
    let s = Surrogate::new(model, stats).unwrap();
    for sim in &sims {
        let mut poisoned = sim.clone();
        for f in &mut poisoned.frames[1..] {
            for v in f
                .coords
                .iter_mut()
                .chain(f.displacements.iter_mut())
                .chain(f.stress.iter_mut())
                .chain(f.strain.iter_mut())
            {
                *v = f64::NAN;
            }
        }
        let clean = s.predict_record(sim).unwrap();
        let dirty = s.predict_record(&poisoned).unwrap();
        assert_eq!(bits(&clean), bits(&dirty));
        assert_eq!(clean.frames.len(), sim.frames.len());
    }
}

#[test]
fn zero_network_has_no_displacement_skill() {
    let sims = small_set(6, 6);
    let stats = NormalizationStats::fit(&sims).unwrap();
    let mut model = NepModel::init(
        NepConfig {
            node_dims: vec![9, 9],
            hidden: vec![2],
            kernel: 3,
        },
        0,
    )
    .unwrap();
    for t in model.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let report = evaluate(&Surrogate::new(model, stats).unwrap(), &sims).unwrap();
    for p in [Parameter::Dx, Parameter::Dy, Parameter::Rd] {
        assert!(
            report.row(p).unwrap().r2 <= 0.0,
            "{p:?}: {}",
            report.row(p).unwrap().r2
        );
    }
    assert_eq!(report.rows.len(), 5);
    assert_eq!(
        report.row(Parameter::Stress).unwrap().values_per_sim,
        6 * 64
    );
}
