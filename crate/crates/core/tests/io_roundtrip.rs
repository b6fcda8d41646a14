use mrd_adjust::design::{partition, Assignment, DesignSpec, GroupLabel};
use mrd_adjust::io::{load_long_csv, long_csv_string, read_long_csv, write_long_csv, LongData};
use mrd_adjust::moments::CovariateTensor;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample_data(i: usize, j: usize, d: usize, seed: u64) -> LongData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = || DMatrix::from_fn(i, j, |_, _| rng.random::<f64>() * 1e3 - 5e2);
    let outcome = m();
    let layers = (0..d).map(|_| m()).collect();
    LongData {
        outcome,
        covariates: CovariateTensor::new(layers).unwrap(),
        assignment: Some(Assignment::new((0..i).map(|k| k % 2 == 0).collect(), (0..j).map(|k| k < j / 2).collect())),
        buyer_ids: (0..i).map(|k| format!("b{k:03}")).collect(),
        seller_ids: (0..j).map(|k| format!("s{k:03}")).collect(),
    }
}

#[test]
fn long_csv_round_trip_is_bit_exact() {
    let data = sample_data(7, 5, 3, 1);
    let text = long_csv_string(&data).unwrap();
    let back = read_long_csv(text.as_bytes()).unwrap();
    assert_eq!(back, data);
    for (a, b) in back.outcome.iter().zip(data.outcome.iter()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.csv");
    write_long_csv(&path, &data).unwrap();
    assert_eq!(load_long_csv(&path).unwrap(), data);
}

#[test]
fn row_order_does_not_matter() {
    let data = sample_data(3, 4, 1, 2);
    let text = long_csv_string(&data).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let head = lines.remove(0);
    lines.reverse();
    let shuffled = format!("{head}\n{}\n", lines.join("\n"));
    assert_eq!(read_long_csv(shuffled.as_bytes()).unwrap(), data);
}

#[test]
fn four_by_eight_layout_partitions_like_the_example() {
    let mut text = String::from("buyer_id,seller_id,outcome,x1,treated_buyer,treated_seller\n");
    for i in 1..=4 {
        for j in 1..=8 {
            let tb = u8::from(i <= 2);
            let ts = u8::from(j <= 4);
            text.push_str(&format!("{i},{j},{},{},{tb},{ts}\n", i * 10 + j, i + j));
        }
    }
    let d = read_long_csv(text.as_bytes()).unwrap();
    let a = d.assignment.unwrap();
    let spec = DesignSpec::new(4, 8, 2, 4).unwrap();
    let p = partition(&spec, &a).unwrap();
    assert_eq!(p.buyers_of(GroupLabel::Tr), &[0, 1]);
    assert_eq!(p.sellers_of(GroupLabel::Tr), &[0, 1, 2, 3]);
    assert_eq!(p.buyers_of(GroupLabel::Cc), &[2, 3]);
    assert_eq!(p.sellers_of(GroupLabel::Ib), &[4, 5, 6, 7]);
    for g in GroupLabel::ALL {
        assert_eq!(p.size(g), (2, 4));
    }
}

#[test]
fn covariate_arity_must_be_constant() {
    let text = "buyer_id,seller_id,outcome,x1\na,x,1,2\na,y,2\n";
    assert!(read_long_csv(text.as_bytes()).is_err());
}
