import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "jsdom",
    globalSetup: ["./scripts/service-setup.mjs"],
    testTimeout: 30_000,
    hookTimeout: 120_000,
  },
});
