use dexhand_core::gesture::{parse_expr, CostProgram, Exemplar, Expr, ParseErrorKind, Ty};
use dexhand_core::hand::Preset;
use dexhand_core::rng::{self, Rng};
use proptest::prelude::*;

const FINGERS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Val {
    S(f64),
    V([f64; 3]),
}

/// Tree-walking interpreter, independent of the compiled stack machine.
fn interpret(e: &Expr, tips: &[f64]) -> Val {
    use Val::{S, V};
    let vec_op = |a: Val, b: Val, f: fn(f64, f64) -> f64| match (a, b) {
        (S(x), S(y)) => S(f(x, y)),
        (V(x), V(y)) => V([f(x[0], y[0]), f(x[1], y[1]), f(x[2], y[2])]),
        _ => panic!("ill-typed"),
    };
    let scale = |a: Val, c: f64| match a {
        S(x) => S(x * c),
        V(v) => V(v.map(|x| x * c)),
    };
    match e {
        Expr::Num(v) => S(*v),
        Expr::Vec3(v) => V(*v),
        Expr::Tip(i) => V([tips[3 * i], tips[3 * i + 1], tips[3 * i + 2]]),
        Expr::Axis(x, a) => match interpret(x, tips) {
            V(v) => S(v[*a]),
            S(_) => panic!("axis of scalar"),
        },
        Expr::Add(a, b) => vec_op(interpret(a, tips), interpret(b, tips), |x, y| x + y),
        Expr::Sub(a, b) => vec_op(interpret(a, tips), interpret(b, tips), |x, y| x - y),
        Expr::Scale(x, c) => scale(interpret(x, tips), *c),
        Expr::Neg(x) => scale(interpret(x, tips), -1.0),
        Expr::Norm(x) => match interpret(x, tips) {
            V(v) => S((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()),
            S(_) => panic!("norm of scalar"),
        },
        Expr::Dot(a, b) => match (interpret(a, tips), interpret(b, tips)) {
            (V(u), V(v)) => S(u[0] * v[0] + u[1] * v[1] + u[2] * v[2]),
            _ => panic!("dot of scalars"),
        },
        Expr::Mean(xs) => {
            let vals: Vec<Val> = xs.iter().map(|x| interpret(x, tips)).collect();
            let sum = vals[1..].iter().fold(vals[0], |acc, v| vec_op(acc, *v, |x, y| x + y));
            scale(sum, 1.0 / xs.len() as f64)
        }
    }
}

fn literal(r: &mut Rng) -> f64 {
    // a mix of short decimals and full-precision values
    if rng::index(r, 2) == 0 {
        (rng::uniform(r, -20.0, 20.0) * 4.0).round() / 4.0
    } else {
        rng::uniform(r, -3.0, 3.0)
    }
}

fn random_expr(r: &mut Rng, ty: Ty, depth: usize) -> Expr {
    let b = |e: Expr| Box::new(e);
    let leaf = depth == 0 || rng::index(r, 4) == 0;
    match ty {
        Ty::Vec3 if leaf => {
            if rng::index(r, 3) == 0 {
                Expr::Vec3([literal(r), literal(r), literal(r)])
            } else {
                Expr::Tip(rng::index(r, FINGERS))
            }
        }
        Ty::Scalar if leaf => {
            if rng::index(r, 3) == 0 {
                Expr::Num(literal(r))
            } else {
                Expr::Axis(b(Expr::Tip(rng::index(r, FINGERS))), rng::index(r, 3))
            }
        }
        _ => {
            let d = depth - 1;
            let common = rng::index(r, 6);
            match common {
                0 => Expr::Add(b(random_expr(r, ty, d)), b(random_expr(r, ty, d))),
                1 => Expr::Sub(b(random_expr(r, ty, d)), b(random_expr(r, ty, d))),
                2 => Expr::Scale(b(random_expr(r, ty, d)), literal(r)),
                3 => Expr::Neg(b(random_expr(r, ty, d))),
                4 => {
                    let n = 1 + rng::index(r, 3);
                    Expr::Mean((0..n).map(|_| random_expr(r, ty, d)).collect())
                }
                _ => match ty {
                    Ty::Scalar => match rng::index(r, 3) {
                        0 => Expr::Norm(b(random_expr(r, Ty::Vec3, d))),
                        1 => Expr::Dot(b(random_expr(r, Ty::Vec3, d)), b(random_expr(r, Ty::Vec3, d))),
                        _ => Expr::Axis(b(random_expr(r, Ty::Vec3, d)), rng::index(r, 3)),
                    },
                    Ty::Vec3 => Expr::Sub(b(random_expr(r, Ty::Vec3, d)), b(Expr::Tip(rng::index(r, FINGERS)))),
                },
            }
        }
    }
}

fn names() -> Vec<String> {
    ["thumb", "index", "middle", "ring", "little"].iter().map(|s| s.to_string()).collect()
}

#[test]
fn fuzzed_programs_round_trip_and_agree_with_reference() {
    let mut r = rng::seeded(31337);
    let names = names();
    for case in 0..100 {
        let expr = random_expr(&mut r, Ty::Scalar, 1 + case % 5);
        let text = expr.to_string();
        let p = CostProgram::parse(&text, FINGERS, &names).unwrap_or_else(|e| panic!("case {case}: {text}: {e}"));
        assert_eq!(p.expr, expr, "case {case}: {text}");
        assert_eq!(p.canonical(), text);
        for _ in 0..5 {
            let tips: Vec<f64> = (0..3 * FINGERS).map(|_| rng::uniform(&mut r, -0.2, 0.2)).collect();
            let want = match interpret(&expr, &tips) {
                Val::S(v) => v,
                Val::V(_) => unreachable!(),
            };
            let got = p.eval(&tips).unwrap();
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "case {case}: {text}: {got} vs {want}");
        }
    }
}

#[test]
fn whitespace_comments_and_names_do_not_change_meaning() {
    let a = CostProgram::parse("norm(tip(thumb)-tip(index))*2", FINGERS, &names()).unwrap();
    let b = CostProgram::parse("  # pinch\n 2 *\tnorm( tip(0) - tip(1) ) # done", FINGERS, &names()).unwrap();
    assert_eq!(a.expr, b.expr);
    assert_eq!(a.canonical(), "norm(tip(0) - tip(1)) * 2");
}

#[test]
fn malformed_programs_are_rejected_with_positions() {
    let n = names();
    let cases = [
        ("norm(tip(0)", ParseErrorKind::Syntax, 11),
        ("dot(tip(0))", ParseErrorKind::Syntax, 10),
        ("tip(5).x", ParseErrorKind::IndexOutOfRange, 4),
        ("bogus(1)", ParseErrorKind::UnknownSymbol, 0),
        ("norm(1)", ParseErrorKind::TypeMismatch, 5),
        ("1 + tip(0)", ParseErrorKind::TypeMismatch, 4),
        ("[1, 2]", ParseErrorKind::Syntax, 5),
        ("2 $ 3", ParseErrorKind::Syntax, 2),
    ];
    for (src, kind, pos) in cases {
        let e = parse_expr(src, FINGERS, &n).err().or_else(|| CostProgram::parse(src, FINGERS, &n).err());
        let e = e.unwrap_or_else(|| panic!("{src} parsed"));
        assert_eq!((e.kind, e.position), (kind, pos), "{src}: {e}");
    }
}

#[test]
fn ok_cost_is_minimal_at_closed_pinch_with_extended_fingers() {
    let hand = Preset::Shadowhand.config();
    let p = Exemplar::Ok.program(&hand).unwrap();
    let mut r = rng::seeded(4);
    let mut tips = hand.random_state(1).tips;
    let thumb = tips[0..3].to_vec();
    tips[3..6].copy_from_slice(&thumb);
    let closed = p.eval(&tips).unwrap();
    for _ in 0..50 {
        let mut open = tips.clone();
        for v in &mut open[3..6] {
            *v += rng::uniform(&mut r, -0.02, 0.02);
        }
        assert!(p.eval(&open).unwrap() >= closed);
    }
}

proptest! {
    #[test]
    fn numbers_print_and_parse_to_the_same_bits(x in -1e6f64..1e6) {
        let e = Expr::Num(x);
        let back = parse_expr(&e.to_string(), FINGERS, &names()).unwrap();
        prop_assert_eq!(back, e);
    }

    #[test]
    fn arbitrary_text_never_panics(s in "[ -~]{0,40}") {
        let _ = CostProgram::parse(&s, FINGERS, &names());
    }
}
