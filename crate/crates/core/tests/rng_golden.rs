use alif_snn::numerics::Rng;

const GOLDEN: &str = include_str!("golden/rng_seed42.txt");

fn line(key: &str) -> Vec<&'static str> {
    let row = GOLDEN
        .lines()
        .find(|l| l.split_whitespace().next() == Some(key))
        .unwrap_or_else(|| panic!("golden file has no `{key}` line"));
    row.split_whitespace().skip(1).collect()
}

#[test]
fn first_hundred_raw_draws() {
    let want: Vec<u64> = line("u64").iter().map(|s| s.parse().unwrap()).collect();
    assert_eq!(want.len(), 100);
    let mut rng = Rng::new(42);
    for (i, w) in want.iter().enumerate() {
        assert_eq!(rng.next_u64(), *w, "draw {i}");
    }
}

#[test]
fn uniform_draws_are_bit_exact() {
    let mut rng = Rng::new(42);
    for (i, s) in line("f64").iter().enumerate() {
        let want: f64 = s.parse().unwrap();
        assert_eq!(rng.next_f64().to_bits(), want.to_bits(), "draw {i}");
    }
}

#[test]
fn split_streams() {
    let base = Rng::new(42);
    for idx in [0u64, 7] {
        let mut child = base.split(idx);
        for s in line(&format!("split{idx}")) {
            assert_eq!(child.next_u64(), s.parse::<u64>().unwrap());
        }
    }
    assert_eq!(base, Rng::new(42));
}

#[test]
fn shuffle_order() {
    let want: Vec<usize> = line("shuffle").iter().map(|s| s.parse().unwrap()).collect();
    let mut items: Vec<usize> = (0..10).collect();
    Rng::new(42).shuffle(&mut items);
    assert_eq!(items, want);
}
