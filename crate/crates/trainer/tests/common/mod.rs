pub mod bandit;
pub mod c51_oracle;
pub mod fidelity;
