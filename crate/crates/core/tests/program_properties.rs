use partmanip::program::gen::{random_program, GenConfig};
use partmanip::program::{interpret, parse_program, print_program, Program, SkillRuntime, TerminatedBy};
use partmanip::scene::{build_object_with, Category, TemplateConfig};
use partmanip::skills::{face_grasp, SimHandle, SkillConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn program(seed: u64, cfg: GenConfig) -> Program {
    random_program(&mut ChaCha8Rng::seed_from_u64(seed), cfg)
}

fn sim(category: Category, seed: u64) -> SimHandle {
    SimHandle::new(build_object_with(TemplateConfig::builtin(), category, seed).unwrap())
}

fn gen_config() -> impl Strategy<Value = GenConfig> {
    (1..6usize, 0..5usize, 1..6usize).prop_map(|(max_stmts, max_nesting, max_expr_depth)| GenConfig { max_stmts, max_nesting, max_expr_depth })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn print_then_parse_is_identity(seed in any::<u64>(), cfg in gen_config()) {
        let p = program(seed, cfg);
        let text = print_program(&p);
        let back = parse_program(&text).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(print_program(&back), text);
    }

    #[test]
    fn parser_never_panics(src in "[a-z0-9_(){}+*<>=!#\\- \n]{0,80}") {
        if let Ok(p) = parse_program(&src) {
            prop_assert_eq!(parse_program(&print_program(&p)).unwrap(), p);
        }
    }

    #[test]
    fn interpretation_halts_within_budget(seed in any::<u64>(), cat in 0..7usize, budget in 1..40usize) {
        let p = program(seed, GenConfig::default());
        let category = Category::ALL[cat];
        let run = || {
            let mut s = sim(category, seed % 50);
            let grasp = face_grasp(&s.object, s.object.target_part().id);
            let rt = SkillRuntime::new(SkillConfig::default(), grasp, budget);
            let trace = interpret(&p, &rt, &mut s, seed);
            (trace, s.log_jsonl())
        };
        let (trace, log) = run();
        prop_assert!(trace.steps_used <= budget);
        prop_assert!(trace.calls.len() <= budget);
        prop_assert_eq!(trace.steps_used, trace.calls.len());
        if trace.terminated_by == TerminatedBy::Error {
            prop_assert!(trace.error.is_some());
        }
        prop_assert_eq!(trace.task_success, trace.terminated_by == TerminatedBy::Goal);
        let (again, log_again) = run();
        prop_assert_eq!(trace.to_json(), again.to_json());
        prop_assert_eq!(log, log_again);
    }

    #[test]
    fn lock_counters_never_increase(seed in any::<u64>(), cat in 0..7usize) {
        let p = program(seed, GenConfig { max_stmts: 6, ..GenConfig::default() });
        let mut s = sim(Category::ALL[cat], seed % 50);
        let id = s.object.target_part().id;
        let before = s.object.mechanism_of(id).unwrap().counter();
        let grasp = face_grasp(&s.object, id);
        interpret(&p, &SkillRuntime::new(SkillConfig::default(), grasp, 30), &mut s, seed);
        let m = s.object.mechanism_of(id).unwrap();
        prop_assert!(m.counter() <= before);
        prop_assert_eq!(m.is_unlocked(), m.counter() == 0);
    }
}

#[test]
fn different_seeds_can_diverge() {
    let p = parse_program("grasp(part)\nwhile rand() * 2 < 1 {\n  rotate_ccw()\n}").unwrap();
    let lengths: std::collections::BTreeSet<usize> = (0..20)
        .map(|seed| {
            let mut s = sim(Category::Bottle, 1);
            let grasp = face_grasp(&s.object, s.object.target_part().id);
            interpret(&p, &SkillRuntime::new(SkillConfig::default(), grasp, 50), &mut s, seed).calls.len()
        })
        .collect();
    assert!(lengths.len() > 1, "{lengths:?}");
}
