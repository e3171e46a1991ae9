//! Static description of the experiment kinds, for `exclab list`.

use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct CatalogEntry {
    pub kind: &'static str,
    pub summary: &'static str,
    /// The result the experiment gives evidence for.
    pub supports: &'static str,
    pub required: &'static [&'static str],
    pub optional: &'static [&'static str],
}

const COMMON: &[&str] = &["seed", "replicas", "[graph]"];

pub const CATALOG: &[CatalogEntry] = &[
    CatalogEntry {
        kind: "simulate",
        summary: "cylinder probabilities of the perturbed process at chosen times",
        supports: "graphical construction of the quasi-symmetric exclusion process",
        required: &["[measure]", "experiment.horizon", "experiment.cylinders"],
        optional: &["[[perturbation]]", "experiment.times", "experiment.engine", "experiment.trajectory"],
    },
    CatalogEntry {
        kind: "duality",
        summary: "forward versus dual evaluation on shared clocks; dual hitting probabilities",
        supports: "self-duality of the symmetric process and the approximate dual of the perturbed one; \
                   a transient walk meets a fixed site with vanishing probability from far away",
        required: &["experiment.horizon"],
        optional: &[
            "experiment.mode",
            "experiment.cylinder",
            "experiment.sets",
            "experiment.target",
            "experiment.walk_comparison",
            "experiment.expect_decreasing",
            "experiment.expect_pathwise",
            "experiment.sigma",
            "[measure]",
        ],
    },
    CatalogEntry {
        kind: "infinitesimal",
        summary: "joint law of the infinitesimal coupling at the perturbed sites, and its first-order accuracy",
        supports: "the infinitesimal coupling lemma: E f(ξ^s_0) agrees with ∫f dμS̄(s) to first order in s",
        required: &["[measure]", "[[perturbation]]", "experiment.s"],
        optional: &["experiment.sigma", "experiment.expect_table", "experiment.slope"],
    },
    CatalogEntry {
        kind: "derivative",
        summary: "time derivative of a cylinder probability against the conditioned coupled difference",
        supports: "the derivative identity εμ{D} E[∏ξ̂ − ∏η̂] and its discrepancy bound",
        required: &["[measure]", "[[perturbation]] (one entry)", "experiment.cylinder", "experiment.times"],
        optional: &["experiment.lhs", "experiment.h", "experiment.sigma", "experiment.expect_agree", "experiment.expect_bound"],
    },
    CatalogEntry {
        kind: "green",
        summary: "occupation time of a single discrepancy, truncated at growing horizons",
        supports: "finiteness of the discrepancy Green's function G*(z,x) for transient walks",
        required: &["[measure]", "experiment.z", "experiment.horizons"],
        optional: &["[[perturbation]]", "experiment.sites", "experiment.expect", "experiment.sigma"],
    },
    CatalogEntry {
        kind: "cesaro",
        summary: "time-averaged cylinder probabilities at increasing distance from the perturbation",
        supports: "asymptotics in the transient case: far from the perturbation the limit looks like the initial product measure",
        required: &["[measure]", "experiment.cylinders", "experiment.horizon"],
        optional: &[
            "[[perturbation]]",
            "experiment.grid_points",
            "experiment.backend",
            "experiment.reference",
            "experiment.expect_decay",
            "experiment.require_buffer",
            "experiment.sigma",
        ],
    },
    CatalogEntry {
        kind: "potential",
        summary: "potential-kernel increments |a(x+y) − a(x)| along a ray, by exact distribution iteration",
        supports: "the recurrent-case hypothesis that potential-kernel increments vanish at infinity",
        required: &["experiment.offset", "experiment.radii", "experiment.steps"],
        optional: &[
            "experiment.origin",
            "experiment.return_steps",
            "experiment.expect_trend",
            "experiment.final_target",
            "experiment.final_tolerance",
            "experiment.prune",
        ],
    },
    CatalogEntry {
        kind: "stationarity",
        summary: "exact generator residual of a product measure on cylinder functions",
        supports: "invariance of the two-density product measures ν^c for a single perturbed nearest-neighbour edge",
        required: &["[[perturbation]] (one entry) or [measure]"],
        optional: &["experiment.c", "experiment.eps", "experiment.cylinders", "experiment.max_size", "experiment.tolerance", "[measure]"],
    },
    CatalogEntry {
        kind: "oracle-compare",
        summary: "Monte Carlo engines against exact transient probabilities on a small window",
        supports: "correctness of every simulation engine, checked against the exact finite-state chain",
        required: &["[measure]", "experiment.times", "experiment.cylinders"],
        optional: &["[[perturbation]]", "experiment.engines", "experiment.xi_ones", "experiment.sigma"],
    },
];

pub fn common_fields() -> &'static [&'static str] {
    COMMON
}

pub fn text() -> String {
    let mut s = format!("Fields every config needs: {}\n", COMMON.join(", "));
    for e in CATALOG {
        s.push_str(&format!("\n{}\n  {}\n  supports: {}\n", e.kind, e.summary, e.supports));
        s.push_str(&format!("  required: {}\n", e.required.join(", ")));
        if !e.optional.is_empty() {
            s.push_str(&format!("  optional: {}\n", e.optional.join(", ")));
        }
    }
    s
}

pub fn json() -> String {
    serde_json::to_string_pretty(&serde_json::json!({"common": COMMON, "experiments": CATALOG})).expect("catalog serializes")
}
