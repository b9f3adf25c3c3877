mod common;

use proxy_audit::data::{Codebook, Dataset, LoadOptions};
use proxy_audit::expr::{evaluate, Expr, RelOp, Value};
use proxy_audit::frontends::{
    from_decision_tree, from_linear_model, from_rule_list, load_model, parse_cart_text, train_cart,
    CartParams, Category, LinearModel, Literal, Rule, RuleList, TreeSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tree(rng: &mut ChaCha8Rng, depth: usize) -> TreeSpec {
    if depth == 0 || rng.gen_bool(0.2) {
        return TreeSpec::leaf(rng.gen_range(0..3) as f64);
    }
    let f = common::VARS[rng.gen_range(0..4)];
    let l = random_tree(rng, depth - 1);
    let r = random_tree(rng, depth - 1);
    if rng.gen_bool(0.3) {
        let cats = (0..4).filter(|_| rng.gen_bool(0.5)).map(|c| Category::Code(c as f64)).collect::<Vec<_>>();
        let cats = if cats.is_empty() { vec![Category::Code(1.0)] } else { cats };
        TreeSpec::split_in(f, cats, l, r)
    } else {
        TreeSpec::split(f, rng.gen_range(0..8) as f64 / 2.0 - 0.25, l, r)
    }
}

fn row_fn(data: &Dataset, r: usize) -> impl Fn(&str) -> Option<f64> + '_ {
    move |name| data.value(r, name)
}

#[test]
fn translated_trees_agree_with_the_tree_walk() {
    let data = common::synthetic(1000, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..40 {
        let tree = random_tree(&mut rng, 5);
        let p = from_decision_tree(&tree, data.codebook()).unwrap();
        assert!(p.size() >= tree.node_count());
        for r in 0..data.len() {
            let want = tree.predict(&row_fn(&data, r), data.codebook()).unwrap();
            assert_eq!(evaluate(&p, &data.row_env(r)).unwrap(), want);
        }
    }
}

#[test]
fn translated_linear_models_agree_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cols: Vec<String> = (0..5).map(|i| format!("f{i}")).chain(["z".to_string()]).collect();
    let rows: Vec<Vec<f64>> = (0..1000)
        .map(|_| (0..6).map(|_| rng.gen_range(-10.0..10.0)).collect())
        .collect();
    let data = Dataset::new(cols, rows, "z").unwrap();
    for _ in 0..30 {
        let m = LinearModel {
            weights: (0..5).map(|i| (format!("f{i}"), rng.gen_range(-3.0..3.0))).collect(),
            intercept: rng.gen_range(-1.0..1.0),
            threshold: rng.gen_range(-2.0..2.0),
        };
        let p = from_linear_model(&m);
        for r in 0..data.len() {
            let want = m.predict(&row_fn(&data, r)).unwrap();
            assert_eq!(evaluate(&p, &data.row_env(r)).unwrap(), Value::Bool(want));
        }
    }
}

#[test]
fn translated_rule_lists_agree_on_every_assignment() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ops = [RelOp::Le, RelOp::Lt, RelOp::Eq, RelOp::Ge, RelOp::Gt];
    let cb = Codebook::default();
    for _ in 0..50 {
        let list = RuleList {
            rules: (0..rng.gen_range(0..5))
                .map(|_| Rule {
                    when: (0..rng.gen_range(0..3))
                        .map(|_| Literal {
                            feature: common::VARS[rng.gen_range(0..3)].to_string(),
                            op: ops[rng.gen_range(0..5)],
                            value: Category::Code(rng.gen_range(0..4) as f64),
                        })
                        .collect(),
                    label: Value::Num(rng.gen_range(0..3) as f64),
                })
                .collect(),
            default: Value::Num(9.0),
        };
        let p = from_rule_list(&list, &cb).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    let vals = [a as f64, b as f64, c as f64];
                    let row = |n: &str| common::VARS.iter().position(|v| *v == n).map(|i| vals[i]);
                    let env = |n: &str| row(n).map(Value::Num);
                    assert_eq!(evaluate(&p, &env).unwrap(), list.predict(&row, &cb).unwrap());
                }
            }
        }
    }
}

#[test]
fn trained_cart_replays_through_its_program_and_text_dump() {
    let data = common::synthetic(600, 21);
    let rows: Vec<usize> = (0..400).collect();
    let data = data
        .with_derived_column("y", |r| ((r.num("x1").unwrap() + r.num("x2").unwrap()) > 3.0) as u8 as f64)
        .unwrap();
    let tree = train_cart(&data, &rows, &["x0", "x1", "x2", "x3"], "y", &CartParams::default()).unwrap();
    assert!(tree.depth() <= 5);
    let p = from_decision_tree(&tree, data.codebook()).unwrap();
    let mut hits = 0;
    for r in 0..data.len() {
        let got = evaluate(&p, &data.row_env(r)).unwrap();
        assert_eq!(got, tree.predict(&row_fn(&data, r), data.codebook()).unwrap());
        hits += (got.as_f64() == data.value(r, "y").unwrap()) as usize;
    }
    assert!(hits as f64 / data.len() as f64 > 0.95);

    let dump = dump_cart(&tree, 0);
    let parsed = parse_cart_text(&dump).unwrap();
    assert_eq!(parsed, tree);
    assert_eq!(load_model(&dump, data.codebook()).unwrap(), p);
}

fn dump_cart(t: &TreeSpec, depth: usize) -> String {
    let pad = "|   ".repeat(depth);
    match t {
        TreeSpec::Leaf { leaf } => format!("{pad}|--- class: {}\n", leaf.as_f64()),
        TreeSpec::Split(s) => {
            let th = s.threshold.unwrap();
            format!(
                "{pad}|--- {f} <= {th}\n{l}{pad}|--- {f} >  {th}\n{r}",
                f = s.feature,
                l = dump_cart(&s.left, depth + 1),
                r = dump_cart(&s.right, depth + 1),
            )
        }
    }
}

#[test]
fn masked_tree_denies_high_interest_in_b_zips() {
    let (p, data) = common::masked();
    let cb = data.codebook();
    let env = |zip: &str, interest: &str| {
        let z = cb.code("zip", zip).unwrap();
        let i = cb.code("interest", interest).unwrap();
        move |n: &str| match n {
            "zip" => Some(Value::Num(z)),
            "interest" => Some(Value::Num(i)),
            _ => None,
        }
    };
    assert_eq!(evaluate(&p, &env("b1", "high")).unwrap(), Value::Num(0.0));
    assert_eq!(evaluate(&p, &env("b2", "low")).unwrap(), Value::Num(1.0));
    assert_eq!(evaluate(&p, &env("w1", "high")).unwrap(), Value::Num(1.0));
    assert_eq!(evaluate(&p, &env("w2", "low")).unwrap(), Value::Num(0.0));
    match &p {
        Expr::Ite { guard, .. } => assert_eq!(**guard, common::masked_guard(&data)),
        other => panic!("expected an if-then-else, got {other}"),
    }
}

#[test]
fn unknown_category_and_bad_documents_are_rejected() {
    let (_, data) = common::masked();
    let bad = r#"{"model":"tree","root":{"feature":"zip","categories":["q9"],"left":{"leaf":0},"right":{"leaf":1}}}"#;
    assert!(load_model(bad, data.codebook()).is_err());
    let both = r#"{"model":"tree","root":{"feature":"zip","threshold":1,"categories":[0],"left":{"leaf":0},"right":{"leaf":1}}}"#;
    assert!(load_model(both, data.codebook()).is_err());
    assert!(load_model("not json", data.codebook()).is_err());
    assert!(parse_cart_text("|--- a <= 1\n|   |--- class: 1\n").is_err());
    let mixed = r#"{"model":"tree","root":{"feature":"zip","threshold":1,"left":{"leaf":0},"right":{"leaf":true}}}"#;
    assert!(load_model(mixed, data.codebook()).is_err());
}

#[test]
fn categorical_columns_are_coded_in_first_seen_order() {
    let text = "c,n,z\nred,1.5,a\nblue,2,b\nred,3,a\ngreen,4,b\n";
    let mut opts = LoadOptions::new("z");
    opts.split = 1.0;
    let d = Dataset::parse_csv(text, &opts).unwrap();
    assert_eq!(d.codebook().levels("c").unwrap(), ["red", "blue", "green"]);
    assert_eq!(d.column_at("c", &[0, 1, 2, 3]).unwrap(), [0.0, 1.0, 0.0, 2.0]);
    assert_eq!(d.column_at("n", &[0, 1, 2, 3]).unwrap(), [1.5, 2.0, 3.0, 4.0]);
    assert!(!d.codebook().is_categorical("n"));
    for missing in ["c,n,z\nred,,a\n", "c,n,z\nred,?,a\n", "c,n,z\nNA,1,a\n"] {
        assert!(Dataset::parse_csv(missing, &opts).is_err(), "{missing}");
    }
    let mut strict = opts.clone();
    strict.numeric = vec!["c".into()];
    assert!(Dataset::parse_csv(text, &strict).is_err());
}

#[test]
fn bundled_datasets_load() {
    let ricci = common::ricci("race");
    assert_eq!(ricci.len(), 118);
    let mut opts = LoadOptions::new("sex");
    opts.label = Some("income".into());
    let adult = Dataset::load(common::data_file("adult_5k.csv"), &opts).unwrap();
    assert_eq!(adult.len(), 5000);
    assert!(!adult.feature_columns().contains(&"sex"));
    assert!(!adult.feature_columns().contains(&"income"));
    assert_eq!(adult.analysis().len() + adult.validation().len(), 5000);
}
