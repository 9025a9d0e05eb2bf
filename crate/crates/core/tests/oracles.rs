//! Fitted quantities against independent numerical oracles.

mod checks;

use checks::oracle;

#[test]
fn q0_fit_matches_projected_gradient_solver() {
    oracle::q0_fit_matches_projected_gradient_solver().unwrap();
}

#[test]
fn posteriors_match_adaptive_quadrature() {
    oracle::posteriors_match_adaptive_quadrature().unwrap();
}

#[test]
fn t_uniform_z_gradient_matches_central_differences() {
    oracle::t_uniform_z_gradient_matches_central_differences().unwrap();
}

#[test]
fn auc_equals_pair_enumeration() {
    oracle::auc_equals_pair_enumeration().unwrap();
}

#[test]
fn control_gene_t_em_matches_grid_search() {
    oracle::control_gene_t_em_matches_grid_search().unwrap();
}

#[test]
fn fits_depend_on_alpha_only_through_its_rowspace() {
    oracle::fits_depend_on_alpha_only_through_its_rowspace().unwrap();
}

#[test]
fn xi_penalty_moves_xi_upwards() {
    oracle::xi_penalty_moves_xi_upwards().unwrap();
}

#[test]
fn thinning_halves_the_mean() {
    oracle::thinning_halves_the_mean().unwrap();
}
