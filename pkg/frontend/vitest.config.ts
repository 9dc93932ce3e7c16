import { defineConfig } from 'vitest/config';

export default defineConfig({
  test: {
    environment: 'happy-dom',
    environmentOptions: {
      // page origin matches the e2e mock server so its fetches are same-origin
      happyDOM: { url: 'http://127.0.0.1:8471' },
    },
    include: ['test/**/*.test.ts'],
    testTimeout: 30_000,
    hookTimeout: 60_000,
  },
});
