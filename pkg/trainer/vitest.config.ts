import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    testTimeout: 120_000,
    hookTimeout: 120_000,
    // acceptance builds datasets and trains; run files sequentially
    fileParallelism: false,
  },
});
