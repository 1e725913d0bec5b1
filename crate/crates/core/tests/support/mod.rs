pub mod ec_oracle;
