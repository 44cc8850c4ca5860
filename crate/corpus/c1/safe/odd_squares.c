s = 0;
for (i = 0; i < N; i++) {
  s = s + 2 * i + 1;
}
// assert(s == N * N)
