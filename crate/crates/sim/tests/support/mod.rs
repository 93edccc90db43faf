pub mod clause_oracle;
