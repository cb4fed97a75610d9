mod support {
    pub mod mapper_oracle;
}

use support::mapper_oracle::{as_sets, oracle, random_case};
use weightscope::mapper::{mapper_pipeline, EpsRule, Filter, MapperParams};
use weightscope::{dataset, Matrix};

#[test]
fn pipeline_matches_brute_force_on_random_clouds() {
    for seed in 0..30 {
        let (points, params) = random_case(1000 + seed);
        let graph = mapper_pipeline(&points, None, &params).unwrap();
        assert_eq!(as_sets(&graph), oracle(&points, &params), "seed {seed}, {params:?}");
    }
}

#[test]
fn triangles_appear_only_with_max_dim_two() {
    // a dense rectangle under a 2x2 cover: the four elements share the middle
    let data: Vec<f64> = (0..30 * 20)
        .flat_map(|i| [(i % 30) as f64 * 0.05, (i / 30) as f64 * 0.05])
        .collect();
    let points = Matrix::from_vec(600, 2, data).unwrap();
    let mut params = MapperParams {
        filter: Filter::pca(2),
        intervals: 2,
        overlap: 0.5,
        eps: EpsRule::Fixed { eps: 0.2 },
        min_samples: 2,
        max_dim: 2,
    };
    let g2 = mapper_pipeline(&points, None, &params).unwrap();
    assert_eq!(as_sets(&g2), oracle(&points, &params));
    assert!(!g2.triangles.is_empty());
    params.max_dim = 1;
    let g1 = mapper_pipeline(&points, None, &params).unwrap();
    assert!(g1.triangles.is_empty());
    assert_eq!(g1.edges, g2.edges);
}

#[test]
fn synthetic_tree_has_three_leaves() {
    let cloud = dataset::synth_tree_cloud(2, 20, 0.0, 0).unwrap();
    let params = MapperParams {
        filter: Filter::L2,
        intervals: 3,
        overlap: 0.34,
        eps: EpsRule::Fixed { eps: 0.15 },
        min_samples: 3,
        max_dim: 1,
    };
    let g = mapper_pipeline(&cloud.coords, cloud.tags.as_deref(), &params).unwrap();
    assert_eq!(as_sets(&g), oracle(&cloud.coords, &params));
    assert!(g.is_tree());
    assert_eq!(g.degree().iter().filter(|&&d| d == 1).count(), 3);
    // the root-side vertex holds the earliest steps
    let root = g
        .vertices
        .iter()
        .min_by(|a, b| a.mean_step.unwrap().total_cmp(&b.mean_step.unwrap()))
        .unwrap();
    assert_eq!(g.degree()[root.id], 1);
}
