s = 0;
for (i = 0; i < N; i++) {
  for (j = 0; j < N; j++) {
    s = s + 1;
  }
}
// assert(s == N * N + 1)
