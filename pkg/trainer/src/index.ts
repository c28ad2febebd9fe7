export * from "./rng.js";
export * from "./tensor.js";
export * from "./se3.js";
export * from "./pointcloud.js";
export * from "./weights.js";
export * from "./encoder.js";
export * from "./solver.js";
export * from "./train.js";
