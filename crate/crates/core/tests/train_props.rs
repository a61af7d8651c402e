use groupbal::balancer::Strategy;
use groupbal::data_synth::{generate, Dataset, SyntheticSpec};
use groupbal::group_state::ControllingVector;
use groupbal::models::{Batch, ModelSpec};
use groupbal::train::{fit, sweep_control, TrainConfig};

fn data() -> Dataset {
    generate(
        &SyntheticSpec {
            n_train: 600,
            n_val: 200,
            n_test: 200,
            noise_dims: 2,
            ..SyntheticSpec::default()
        },
        21,
    )
    .unwrap()
}

fn relabel(b: &Batch, perm: &[usize]) -> Batch {
    let groups = b.groups().iter().map(|&g| perm[g]).collect();
    Batch::new(b.inputs().to_vec(), b.feature_dim(), b.labels().to_vec(), groups, 4).unwrap()
}

#[test]
fn relabeling_groups_permutes_metrics() {
    let base = data();
    // old group k becomes group perm[k]
    let perm = [2, 0, 3, 1];
    let mut moved = base.clone();
    moved.train = relabel(&base.train, &perm);
    moved.val = relabel(&base.val, &perm);
    moved.test = relabel(&base.test, &perm);
    let c = [1.0, 1.5, 1.0, 2.0];
    let mut c_moved = [0.0; 4];
    for k in 0..4 {
        c_moved[perm[k]] = c[k];
    }
    let spec = ModelSpec::linear(4, 2);
    for strategy in [Strategy::Cpt, Strategy::Mgda, Strategy::GroupDro, Strategy::ErmPooled] {
        let cfg = |c: &[f64]| TrainConfig {
            strategy,
            epochs: 40,
            control: Some(ControllingVector::new(c.to_vec()).unwrap()),
            ..TrainConfig::default()
        };
        let a = fit(&spec, &base, &cfg(&c)).unwrap();
        let b = fit(&spec, &moved, &cfg(&c_moved)).unwrap();
        // Frank–Wolfe stops on a duality gap, so its weights are only
        // approximately permutation-equivariant
        let tol = if strategy == Strategy::Mgda { 1e-6 } else { 1e-9 };
        for k in 0..4 {
            let (la, lb) = (a.final_train_loss[k], b.final_train_loss[perm[k]]);
            assert!((la - lb).abs() < tol, "{strategy} group {k}: {la} vs {lb}");
            assert_eq!(
                a.test.per_group_accuracy[k],
                b.test.per_group_accuracy[perm[k]],
                "{strategy} group {k}"
            );
        }
        assert_eq!(a.best_epoch, b.best_epoch);
        assert_eq!(a.test.worst, b.test.worst);
    }
}

#[test]
fn sweep_reports_follow_input_order() {
    let d = data();
    let spec = ModelSpec::linear(4, 2);
    let base = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    let cs: Vec<ControllingVector> = [[1.0, 1.0, 1.0, 2.0], [1.0, 1.0, 1.0, 1.0], [2.0, 1.0, 1.0, 1.0]]
        .iter()
        .map(|c| ControllingVector::new(c.to_vec()).unwrap())
        .collect();
    let reports = sweep_control(&spec, &d, &base, &cs).unwrap();
    for (r, c) in reports.iter().zip(&cs) {
        assert_eq!(r.config.control.as_ref(), Some(c));
        let single = fit(&spec, &d, &TrainConfig { control: Some(c.clone()), ..base.clone() }).unwrap();
        assert_eq!(&single, r);
    }
    // upweighting a group lowers its converged loss
    assert!(reports[0].final_train_loss[3] < reports[1].final_train_loss[3]);
    assert!(reports[2].final_train_loss[0] < reports[1].final_train_loss[0]);
}
