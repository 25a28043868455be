use landmark::rng::SeedStream;
use landmark::semantics::{init_embeddings, init_weights, InitScheme, Role, SemanticExtractor};
use landmark::tensor::{ParamStore, Tape, Tensor};

#[test]
fn identity_table_returns_basis_rows() {
    let mut store = ParamStore::new();
    let table = init_embeddings(&mut store, "t", Role::Subject, 3, 3, 0, InitScheme::IdentityPad);
    let mut tape = Tape::with_params(&store);
    let v = table.extract(&mut tape, 1).unwrap();
    assert_eq!(tape.value(v).data(), &[0.0, 1.0, 0.0]);
    assert!(table.extract(&mut tape, 3).is_err());
}

#[test]
fn lookup_gradient_only_touches_used_rows() {
    let mut store = ParamStore::new();
    let table = init_embeddings(&mut store, "t", Role::Object, 6, 4, 9, InitScheme::SeededGaussian);
    let mut tape = Tape::with_params(&store);
    let rows = table.extract_many(&mut tape, &[4, 1, 4]).unwrap();
    let loss = tape.sum(rows);
    tape.backward(loss).unwrap();
    let grads = tape.param_grads();
    let (_, g) = grads.iter().find(|(id, _)| *id == table.weights).unwrap();
    for (class, row) in g.chunks(4).enumerate() {
        let expected = match class {
            4 => 2.0,
            1 => 1.0,
            _ => 0.0,
        };
        assert!(row.iter().all(|v| *v == expected), "class {class}: {row:?}");
    }
}

#[test]
fn initialization_is_seeded() {
    let a = init_weights(20, 64, 3, InitScheme::SeededGaussian);
    assert_eq!(a, init_weights(20, 64, 3, InitScheme::SeededGaussian));
    assert_ne!(a, init_weights(20, 64, 4, InitScheme::SeededGaussian));
    let mean_norm = (0..20)
        .map(|i| a.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum::<f64>()
        / 20.0;
    assert!((0.8..=1.2).contains(&mean_norm), "{mean_norm}");
}

#[test]
fn identity_pad_rows_are_orthonormal() {
    let w = init_weights(5, 8, 0, InitScheme::IdentityPad);
    for i in 0..5 {
        for j in 0..5 {
            let dot: f64 = w.row(i).iter().zip(w.row(j)).map(|(a, b)| a * b).sum();
            assert_eq!(dot, if i == j { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn tables_are_independent_parameters() {
    let mut store = ParamStore::new();
    let sub = init_embeddings(&mut store, "s", Role::Subject, 4, 3, 1, InitScheme::SeededGaussian);
    let obj = init_embeddings(&mut store, "o", Role::Object, 4, 3, 2, InitScheme::SeededGaussian);
    let ent = init_embeddings(&mut store, "e", Role::Entity, 4, 3, 3, InitScheme::SeededGaussian);
    let before = (obj.row(&store, 2).unwrap().to_vec(), ent.row(&store, 2).unwrap().to_vec());
    store.set(sub.weights, Tensor::full(vec![4, 3], 7.0)).unwrap();
    assert_eq!(obj.row(&store, 2).unwrap(), &before.0[..]);
    assert_eq!(ent.row(&store, 2).unwrap(), &before.1[..]);
    assert_eq!(sub.row(&store, 2).unwrap(), &[7.0, 7.0, 7.0]);
}

#[test]
fn relaxed_extraction_is_linear() {
    let mut store = ParamStore::new();
    let table = init_embeddings(&mut store, "t", Role::Entity, 5, 4, 8, InitScheme::SeededGaussian);
    let mut rng = SeedStream::new(2);
    for _ in 0..20 {
        let class = rng.below(5);
        let alpha = rng.range(-3.0, 3.0);
        let mut tape = Tape::with_params(&store);
        let mut c = vec![0.0; 5];
        c[class] = alpha;
        let c = tape.constant(Tensor::vector(c));
        let relaxed = table.extract_relaxed(&mut tape, c).unwrap();
        let row = table.row(&store, class).unwrap();
        for (got, w) in tape.value(relaxed).data().iter().zip(row) {
            assert!((got - alpha * w).abs() <= 1e-15 * (1.0 + w.abs() * alpha.abs()));
        }
    }
}
