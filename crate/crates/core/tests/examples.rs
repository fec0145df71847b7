// Every cargo example is compiled in here as a module and run once.

macro_rules! example {
    ($name:ident, $file:literal) => {
        #[allow(dead_code, unused_imports)]
        mod $name {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $file));
        }

        #[test]
        fn $name() {
            $name::run().unwrap();
        }
    };
}

example!(gradcheck, "gradcheck.rs");
example!(stencil_convergence, "stencil_convergence.rs");
example!(generate_dataset, "generate_dataset.rs");
example!(micro_pretrain, "micro_pretrain.rs");
example!(pimrl_rollout, "pimrl_rollout.rs");
example!(evaluate_metrics, "evaluate_metrics.rs");
example!(checkpoint_io, "checkpoint_io.rs");
example!(train_gray_scott, "train_gray_scott.rs");
